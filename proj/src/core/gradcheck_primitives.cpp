#include <memory>

#include "weedsense/core/gradcheck.hpp"
#include "weedsense/core/init.hpp"
#include "weedsense/core/ops.hpp"

namespace weedsense {
namespace {

using V = Var<double>;

struct Case {
  ParameterStore<double> store;
  std::uint64_t seed;
  int counter = 0;

  Parameter<double>& input(const std::string& name, Shape shape, double bound = 1.0) {
    return store.add(name, uniform_tensor<double>(std::move(shape), bound, derive_seed(seed, name)));
  }
  // Projects an op output onto a fixed random direction.
  V project(const V& y) {
    return masked_sum(y, uniform_tensor<double>(y.shape(), 1.0, derive_seed(seed, "mask", counter++)));
  }
};

V pv(Parameter<double>& p) { return param_var(p); }

}  // namespace

std::vector<NamedGradCheck> primitive_gradient_checks(std::uint64_t seed) {
  std::vector<NamedGradCheck> out;
  auto run = [&out, seed](const std::string& name, auto&& setup) {
    Case c{{}, derive_seed(seed, name)};
    std::function<V()> loss = setup(c);
    GradCheckOptions opts;
    opts.seed = derive_seed(seed, name, "probe");
    out.push_back({name, check_gradients(c.store, [&] {
                     c.counter = 0;
                     return loss();
                   }, opts)});
  };

  struct ConvCase {
    const char* name;
    Index cin, cout, k;
    Conv2dOptions o;
    bool bias;
  };
  for (const ConvCase& cc : {ConvCase{"conv2d_3x3", 4, 3, 3, {1, 1, 1}, true},
                             ConvCase{"conv2d_3x3_stride2", 4, 3, 3, {2, 1, 1}, false},
                             ConvCase{"conv2d_5x5_pad2", 2, 3, 5, {1, 2, 1}, true},
                             ConvCase{"conv2d_grouped", 4, 6, 3, {1, 1, 2}, true},
                             ConvCase{"conv2d_depthwise", 4, 4, 3, {2, 1, 4}, false},
                             ConvCase{"conv2d_pointwise", 4, 5, 1, {1, 0, 1}, true}}) {
    run(cc.name, [cc](Case& c) {
      auto& x = c.input("x", {2, cc.cin, 5, 6});
      auto& w = c.input("w", {cc.cout, cc.cin / cc.o.groups, cc.k, cc.k});
      Parameter<double>* b = cc.bias ? &c.input("b", {cc.cout}) : nullptr;
      return std::function<V()>([&c, &x, &w, b, cc] {
        return c.project(conv2d(pv(x), pv(w), b ? pv(*b) : V(), cc.o));
      });
    });
  }

  for (Mode mode : {Mode::kTrain, Mode::kEval}) {
    run(mode == Mode::kTrain ? "batch_norm2d_train" : "batch_norm2d_eval", [mode](Case& c) {
      auto& x = c.input("x", {2, 3, 3, 4}, 2.0);
      auto& g = c.input("gamma", {3});
      auto& b = c.input("beta", {3});
      auto rm = std::make_shared<TensorD>(uniform_tensor<double>({3}, 0.5, 11));
      auto rv = std::make_shared<TensorD>(TensorD::full({3}, 1.5));
      return std::function<V()>([&c, &x, &g, &b, rm, rv, mode] {
        BatchNormState<double> st{rm.get(), rv.get()};
        return c.project(batch_norm2d(pv(x), pv(g), pv(b), st, mode));
      });
    });
  }

  for (auto [name, kind] : {std::pair{"relu", Activation::kRelu}, std::pair{"gelu", Activation::kGelu},
                            std::pair{"sigmoid", Activation::kSigmoid}}) {
    run(name, [kind = kind](Case& c) {
      auto& x = c.input("x", {3, 7}, 3.0);
      return std::function<V()>([&c, &x, kind] { return c.project(activation(pv(x), kind)); });
    });
  }

  run("layer_norm", [](Case& c) {
    auto& x = c.input("x", {2, 3, 6}, 2.0);
    auto& g = c.input("gamma", {6});
    auto& b = c.input("beta", {6});
    return std::function<V()>([&c, &x, &g, &b] { return c.project(layer_norm(pv(x), pv(g), pv(b))); });
  });

  run("linear", [](Case& c) {
    auto& x = c.input("x", {2, 3, 4});
    auto& w = c.input("w", {5, 4});
    auto& b = c.input("b", {5});
    return std::function<V()>([&c, &x, &w, &b] { return c.project(linear(pv(x), pv(w), pv(b))); });
  });

  run("pixel_shuffle", [](Case& c) {
    auto& x = c.input("x", {2, 8, 2, 3});
    return std::function<V()>([&c, &x] { return c.project(pixel_shuffle(pv(x), 2)); });
  });
  run("pixel_unshuffle", [](Case& c) {
    auto& x = c.input("x", {1, 2, 6, 3});
    return std::function<V()>([&c, &x] { return c.project(pixel_unshuffle(pv(x), 3)); });
  });
  run("adaptive_avg_pool", [](Case& c) {
    auto& x = c.input("x", {2, 2, 5, 7});
    return std::function<V()>([&c, &x] { return c.project(adaptive_avg_pool(pv(x), 3, 2)); });
  });
  run("max_pool2d", [](Case& c) {
    auto& x = c.input("x", {2, 2, 6, 5});
    return std::function<V()>([&c, &x] { return c.project(max_pool2d(pv(x), 3, 2, 1)); });
  });
  run("avg_pool2d", [](Case& c) {
    auto& x = c.input("x", {2, 2, 6, 5});
    return std::function<V()>([&c, &x] { return c.project(avg_pool2d(pv(x), 3, 2, 1)); });
  });
  run("upsample_nearest", [](Case& c) {
    auto& x = c.input("x", {1, 3, 2, 3});
    return std::function<V()>([&c, &x] { return c.project(upsample_nearest(pv(x), 4)); });
  });
  run("concat_channels", [](Case& c) {
    auto& a = c.input("a", {2, 2, 3, 3});
    auto& b = c.input("b", {2, 3, 3, 3});
    return std::function<V()>([&c, &a, &b] { return c.project(concat_channels(pv(a), pv(b))); });
  });
  run("add_mul_scale", [](Case& c) {
    auto& a = c.input("a", {2, 5});
    auto& b = c.input("b", {2, 5});
    return std::function<V()>([&c, &a, &b] {
      return c.project(scale(mul(add(pv(a), pv(b)), pv(b)), -1.5));
    });
  });
  run("channel_scale_shared", [](Case& c) {
    auto& x = c.input("x", {2, 3, 2, 2});
    auto& s = c.input("s", {3});
    return std::function<V()>([&c, &x, &s] { return c.project(channel_scale(pv(x), pv(s))); });
  });
  run("channel_scale_per_sample", [](Case& c) {
    auto& x = c.input("x", {2, 3, 2, 2});
    auto& s = c.input("s", {2, 3});
    return std::function<V()>([&c, &x, &s] { return c.project(channel_scale(pv(x), pv(s))); });
  });
  run("add_spatial_broadcast", [](Case& c) {
    auto& x = c.input("x", {2, 3, 2, 3});
    auto& y = c.input("y", {2, 3, 1, 1});
    return std::function<V()>([&c, &x, &y] { return c.project(add_spatial_broadcast(pv(x), pv(y))); });
  });
  run("dropout_train", [](Case& c) {
    auto& x = c.input("x", {4, 6});
    return std::function<V()>([&c, &x] { return c.project(dropout(pv(x), 0.3, Mode::kTrain, 99)); });
  });
  run("reshape", [](Case& c) {
    auto& x = c.input("x", {2, 6});
    return std::function<V()>([&c, &x] { return c.project(reshape(pv(x), Shape{3, 4})); });
  });
  run("se_block", [](Case& c) {
    auto& x = c.input("x", {2, 8, 3, 3});
    auto& wr = c.input("w_reduce", {2, 8});
    auto& we = c.input("w_expand", {8, 2});
    return std::function<V()>([&c, &x, &wr, &we] { return c.project(se_block(pv(x), pv(wr), pv(we))); });
  });
  run("multi_head_attention", [](Case& c) {
    auto& x = c.input("x", {2, 3, 8});
    auto& wq = c.input("wq", {8, 8});
    auto& wk = c.input("wk", {8, 8});
    auto& wv = c.input("wv", {8, 8});
    auto& wo = c.input("wo", {8, 8});
    return std::function<V()>([&c, &x, &wq, &wk, &wv, &wo] {
      return c.project(multi_head_attention(pv(x), 2, pv(wq), pv(wk), pv(wv), pv(wo)));
    });
  });
  run("weighted_cross_entropy_2d", [](Case& c) {
    auto& x = c.input("x", {2, 4, 3, 2}, 2.0);
    std::vector<std::int32_t> t;
    Rng rng(c.seed);
    for (int i = 0; i < 12; ++i) t.push_back(static_cast<std::int32_t>(rng.below(4)));
    return std::function<V()>([&x, t] {
      return weighted_cross_entropy_2d(pv(x), t, {0.5, 1.0, 2.0, 0.0});
    });
  });
  run("cross_entropy", [](Case& c) {
    auto& x = c.input("x", {3, 5}, 2.0);
    return std::function<V()>([&x] { return cross_entropy(pv(x), {0, 4, 2}); });
  });
  run("mse_loss", [](Case& c) {
    auto& x = c.input("x", {3, 1}, 5.0);
    return std::function<V()>([&x] { return mse_loss(pv(x), {1.0, -2.0, 0.5}); });
  });
  run("sum_weighted_sum", [](Case& c) {
    auto& a = c.input("a", {2, 2});
    auto& b = c.input("b", {3});
    return std::function<V()>([&a, &b] {
      return weighted_sum<double>({sum(pv(a)), sum(mul(pv(b), pv(b)))}, {0.7, -1.3});
    });
  });
  return out;
}

}  // namespace weedsense
