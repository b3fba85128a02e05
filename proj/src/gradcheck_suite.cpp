#include "cmgan/gradcheck_suite.hpp"

#include <utility>

#include "cmgan/autograd.hpp"
#include "cmgan/discriminator.hpp"
#include "cmgan/generator.hpp"
#include "cmgan/losses.hpp"
#include "cmgan/random.hpp"
#include "cmgan/signal.hpp"

namespace cmgan {

using ag::Shape;
using Tensor = ag::Tensor<double>;
using Leaves = std::vector<std::pair<std::string, Tensor>>;

namespace {

Tensor random_leaf(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<size_t>(ag::numel(shape)));
  for (auto& x : v) x = uniform(rng, lo, hi);
  return Tensor::parameter(std::move(shape), std::move(v));
}

// Inner product with a fixed random projection so that every output element
// contributes a distinct weight to the scalar.
Tensor project(const Tensor& y, Rng& rng) {
  std::vector<double> r(static_cast<size_t>(y.numel()));
  for (auto& x : r) x = uniform(rng, -1.0, 1.0);
  return ag::sum(ag::mul(y, Tensor::constant(y.shape(), std::move(r))));
}

using Builder = std::function<Tensor(const std::vector<Tensor>&)>;

GradCheckCase make_case(std::string name, std::vector<std::pair<Shape, std::pair<double, double>>> inputs,
                        Builder build) {
  return {name, [name, inputs, build](uint64_t seed) {
            Rng rng(seed);
            std::vector<Tensor> xs;
            Leaves leaves;
            for (size_t i = 0; i < inputs.size(); ++i) {
              xs.push_back(random_leaf(rng, inputs[i].first, inputs[i].second.first, inputs[i].second.second));
              leaves.emplace_back(name + ".in" + std::to_string(i), xs.back());
            }
            const uint64_t projection_seed = rng();
            auto loss = [&] {
              Rng prng(projection_seed);
              return project(build(xs), prng);
            };
            return ag::grad_check(loss, leaves);
          }};
}

// Every parameter moved by U(-0.1, 0.1) from its initialization so that no
// affine or slope parameter sits at its identity value.
Leaves randomized_leaves(ParameterSet<double>& ps, Rng& rng) {
  Leaves leaves;
  for (const auto& [name, t] : ps.entries()) {
    Tensor handle = t;
    for (auto& v : handle.mutable_values()) v += uniform(rng, -0.1, 0.1);
    leaves.emplace_back(name, handle);
  }
  return leaves;
}

constexpr ag::GradCheckOptions kModelOptions{1e-5, 6};

constexpr std::pair<double, double> kSigned{-1.0, 1.0};
constexpr std::pair<double, double> kPositive{0.5, 2.0};

}  // namespace

std::vector<GradCheckCase> primitive_grad_cases() {
  std::vector<GradCheckCase> cases;
  cases.push_back(make_case("add", {{{3, 4}, kSigned}, {{3, 4}, kSigned}},
                            [](const auto& x) { return ag::add(x[0], x[1]); }));
  cases.push_back(make_case("sub", {{{3, 4}, kSigned}, {{3, 4}, kSigned}},
                            [](const auto& x) { return ag::sub(x[0], x[1]); }));
  cases.push_back(make_case("mul", {{{3, 4}, kSigned}, {{3, 4}, kSigned}},
                            [](const auto& x) { return ag::mul(x[0], x[1]); }));
  cases.push_back(make_case("add_scalar", {{{5}, kSigned}}, [](const auto& x) { return ag::add_scalar(x[0], 0.3); }));
  cases.push_back(make_case("mul_scalar", {{{5}, kSigned}}, [](const auto& x) { return ag::mul_scalar(x[0], -1.7); }));
  cases.push_back(make_case("pow_scalar", {{{2, 5}, kPositive}},
                            [](const auto& x) { return ag::pow_scalar(x[0], 1.0 / 0.3); }));
  cases.push_back(make_case("matmul", {{{3, 3}, kSigned}, {{3, 3}, kSigned}},
                            [](const auto& x) { return ag::matmul(x[0], x[1]); }));
  cases.push_back(make_case("matmul_batched_transposed", {{{2, 3, 4}, kSigned}, {{2, 5, 4}, kSigned}},
                            [](const auto& x) { return ag::matmul(x[0], x[1], true); }));
  cases.push_back(make_case("linear", {{{2, 3, 4}, kSigned}, {{4, 5}, kSigned}, {{5}, kSigned}},
                            [](const auto& x) { return ag::linear(x[0], x[1], x[2]); }));
  cases.push_back(make_case("conv2d", {{{2, 3, 6, 7}, kSigned}, {{4, 3, 3, 2}, kSigned}, {{4}, kSigned}},
                            [](const auto& x) {
                              ag::Conv2dOptions o;
                              o.stride_w = 2;
                              o.dilation_h = 2;
                              o.pad_top = o.pad_bottom = 2;
                              o.pad_right = 1;
                              return ag::conv2d(x[0], x[1], x[2], o);
                            }));
  cases.push_back(make_case("depthwise_conv1d", {{{2, 7, 3}, kSigned}, {{3, 5}, kSigned}, {{3}, kSigned}},
                            [](const auto& x) { return ag::depthwise_conv1d(x[0], x[1], x[2]); }));
  cases.push_back(make_case("permute", {{{2, 3, 4}, kSigned}},
                            [](const auto& x) { return ag::permute(x[0], {2, 0, 1}); }));
  cases.push_back(make_case("reshape", {{{2, 3, 4}, kSigned}}, [](const auto& x) { return ag::reshape(x[0], {4, -1}); }));
  cases.push_back(make_case("concat", {{{2, 3, 2}, kSigned}, {{2, 1, 2}, kSigned}},
                            [](const auto& x) { return ag::concat<double>({x[0], x[1], x[0]}, 1); }));
  cases.push_back(make_case("slice", {{{3, 6}, kSigned}}, [](const auto& x) { return ag::slice(x[0], 1, 2, 3); }));
  cases.push_back(make_case("sum", {{{4, 2}, kSigned}}, [](const auto& x) { return ag::sum(x[0]); }));
  cases.push_back(make_case("mean", {{{4, 2}, kSigned}}, [](const auto& x) { return ag::mean(x[0]); }));
  cases.push_back(make_case("mean_last", {{{3, 5}, kSigned}}, [](const auto& x) { return ag::mean_last(x[0]); }));
  cases.push_back(make_case("softmax", {{{3, 6}, kSigned}}, [](const auto& x) { return ag::softmax_last(x[0]); }));
  cases.push_back(make_case("attention", {{{2, 5, 3}, kSigned}, {{2, 5, 3}, kSigned}, {{2, 5, 3}, kSigned}},
                            [](const auto& x) { return ag::attention(x[0], x[1], x[2]); }));
  cases.push_back(make_case("layer_norm", {{{3, 6}, kSigned}, {{6}, kSigned}, {{6}, kSigned}},
                            [](const auto& x) { return ag::layer_norm(x[0], x[1], x[2]); }));
  cases.push_back(make_case("instance_norm", {{{2, 3, 4, 3}, kSigned}, {{3}, kSigned}, {{3}, kSigned}},
                            [](const auto& x) { return ag::instance_norm(x[0], x[1], x[2]); }));
  cases.push_back(make_case("prelu", {{{2, 4, 3}, kSigned}, {{4}, kSigned}},
                            [](const auto& x) { return ag::prelu(x[0], x[1], 1); }));
  cases.push_back(make_case("glu", {{{3, 8}, kSigned}}, [](const auto& x) { return ag::glu(x[0], -1); }));
  cases.push_back(make_case("swish", {{{3, 4}, {-3.0, 3.0}}}, [](const auto& x) { return ag::swish(x[0]); }));
  cases.push_back(make_case("sigmoid", {{{3, 4}, {-3.0, 3.0}}}, [](const auto& x) { return ag::sigmoid(x[0]); }));
  cases.push_back(make_case("cos", {{{3, 4}, {-3.0, 3.0}}}, [](const auto& x) { return ag::cos(x[0]); }));
  cases.push_back(make_case("sin", {{{3, 4}, {-3.0, 3.0}}}, [](const auto& x) { return ag::sin(x[0]); }));
  cases.push_back(make_case("abs", {{{3, 4}, kSigned}}, [](const auto& x) { return ag::abs(x[0]); }));
  cases.push_back(make_case("dropout_eval", {{{3, 4}, kSigned}}, [](const auto& x) {
    Rng r(0);
    return ag::dropout(x[0], 0.1, false, r);
  }));
  cases.push_back(make_case("dropout_train", {{{3, 4}, kSigned}}, [](const auto& x) {
    Rng r(42);  // same mask on every evaluation
    return ag::dropout(x[0], 0.3, true, r);
  }));
  return cases;
}

std::vector<GradCheckCase> model_grad_cases() {
  std::vector<GradCheckCase> cases;

  cases.push_back({"conv_block", [](uint64_t seed) {
                     Rng rng(seed);
                     ParameterSet<double> ps;
                     ag::Conv2dOptions o;
                     o.dilation_h = 2;
                     o.pad_top = o.pad_bottom = 2;
                     o.pad_left = o.pad_right = 1;
                     const nn::ConvBlock<double> block(ps, "block", 3, 4, 3, 3, o, 0.2, rng);
                     Leaves leaves = randomized_leaves(ps, rng);
                     const Tensor x = random_leaf(rng, {2, 3, 6, 5});
                     leaves.emplace_back("input", x);
                     const uint64_t pseed = rng();
                     return ag::grad_check([&] {
                       Rng prng(pseed);
                       return project(block(x, {}), prng);
                     }, leaves, kModelOptions);
                   }});

  cases.push_back({"dense_net", [](uint64_t seed) {
                     Rng rng(seed);
                     ParameterSet<double> ps;
                     const nn::DenseNet<double> dense(ps, "dense", 3, {1, 2, 4, 8}, 0.2, rng);
                     Leaves leaves = randomized_leaves(ps, rng);
                     const Tensor x = random_leaf(rng, {1, 3, 10, 4});
                     leaves.emplace_back("input", x);
                     const uint64_t pseed = rng();
                     return ag::grad_check([&] {
                       Rng prng(pseed);
                       return project(dense(x, {}), prng);
                     }, leaves, kModelOptions);
                   }});

  cases.push_back({"conformer_sub_block", [](uint64_t seed) {
                     Rng rng(seed);
                     ParameterSet<double> ps;
                     const nn::ConformerSubBlock<double> block(ps, "sub", {8, 4, 4, 5, 0.1}, rng);
                     Leaves leaves = randomized_leaves(ps, rng);
                     const Tensor x = random_leaf(rng, {3, 6, 8});
                     leaves.emplace_back("input", x);
                     const uint64_t pseed = rng();
                     return ag::grad_check([&] {
                       Rng prng(pseed);
                       return project(block(x, {}), prng);
                     }, leaves, kModelOptions);
                   }});

  for (auto order : {ConformerOrder::TimeThenFreq, ConformerOrder::FreqThenTime, ConformerOrder::Parallel}) {
    cases.push_back({"two_stage_block_" + to_string(order), [order](uint64_t seed) {
                       Rng rng(seed);
                       GeneratorConfig cfg;
                       cfg.channels = 8;
                       cfg.blocks = 1;
                       cfg.freq_bins = 8;
                       cfg.order = order;
                       Generator<double> g(cfg, seed);
                       Leaves all = randomized_leaves(g.params(), rng);
                       Leaves leaves;
                       for (auto& l : all)
                         if (l.first.rfind("conformer0.", 0) == 0) leaves.push_back(l);
                       const Tensor x = random_leaf(rng, {1, 6, 4, 8});
                       leaves.emplace_back("input", x);
                       const uint64_t pseed = rng();
                       return ag::grad_check([&] {
                         Rng prng(pseed);
                         return project(g.block(0)(x, {}), prng);
                       }, leaves, kModelOptions);
                     }});
  }

  cases.push_back({"frequency_shuffle", [](uint64_t seed) {
                     Rng rng(seed);
                     const Tensor x = random_leaf(rng, {2, 6, 3, 4});
                     const uint64_t pseed = rng();
                     return ag::grad_check([&] {
                       Rng prng(pseed);
                       return project(nn::frequency_shuffle(x), prng);
                     }, {{"input", x}});
                   }});

  for (auto mode : {DecoderMode::Both, DecoderMode::MagnitudeOnly, DecoderMode::ComplexOnly}) {
    cases.push_back({"generator_" + to_string(mode), [mode](uint64_t seed) {
                       Rng rng(seed);
                       GeneratorConfig cfg;
                       cfg.channels = 8;
                       cfg.blocks = 1;
                       cfg.freq_bins = 8;
                       cfg.depthwise_kernel = 5;
                       cfg.decoder_mode = mode;
                       Generator<double> g(cfg, seed);
                       Leaves leaves = randomized_leaves(g.params(), rng);
                       const int64_t B = 1, T = 6, F = 8;
                       SpectralInput<double> in;
                       in.magnitude = random_leaf(rng, {B, T, F}, 0.1, 2.0);
                       in.phase = random_leaf(rng, {B, T, F}, -3.0, 3.0);
                       in.real = random_leaf(rng, {B, T, F});
                       in.imag = random_leaf(rng, {B, T, F});
                       leaves.emplace_back("noisy.magnitude", in.magnitude);
                       leaves.emplace_back("noisy.real", in.real);
                       leaves.emplace_back("noisy.imag", in.imag);
                       const uint64_t pseed = rng();
                       return ag::grad_check([&] {
                         Rng prng(pseed);
                         const auto out = g.forward(in, {});
                         return ag::add(ag::add(project(out.real, prng), project(out.imag, prng)),
                                        project(out.magnitude, prng));
                       }, leaves, kModelOptions);
                     }});
  }

  for (const auto& size : {std::pair<int64_t, int64_t>{6, 8}, std::pair<int64_t, int64_t>{32, 36}}) {
    cases.push_back({"discriminator_" + std::to_string(size.first) + "x" + std::to_string(size.second),
                     [size](uint64_t seed) {
                       Rng rng(seed);
                       Discriminator<double> d(DiscriminatorConfig{}, seed);
                       Leaves leaves = randomized_leaves(d.params(), rng);
                       const Tensor ref = random_leaf(rng, {2, size.first, size.second}, 0.0, 2.0);
                       const Tensor est = random_leaf(rng, {2, size.first, size.second}, 0.0, 2.0);
                       leaves.emplace_back("reference", ref);
                       leaves.emplace_back("estimate", est);
                       const uint64_t pseed = rng();
                       return ag::grad_check([&] {
                         Rng prng(pseed);
                         return project(d.score(ref, est), prng);
                       }, leaves, kModelOptions);
                     }});
  }

  cases.push_back({"istft_decompress", [](uint64_t seed) {
                     Rng rng(seed);
                     StftConfig cfg;
                     const Tensor re = random_leaf(rng, {1, 4, 200});
                     const Tensor im = random_leaf(rng, {1, 4, 200});
                     const uint64_t pseed = rng();
                     return ag::grad_check([&] {
                       Rng prng(pseed);
                       auto [r, i] = decompress_tensor(re, im, cfg.compression);
                       return project(istft_tensor(r, i, cfg, 300), prng);
                     }, {{"real", re}, {"imag", im}}, {1e-5, 64});
                   }});

  auto loss_case = [&](std::string name, std::vector<Shape> shapes, std::pair<double, double> range,
                       std::function<Tensor(const std::vector<Tensor>&)> build) {
    cases.push_back({name, [name, shapes, range, build](uint64_t seed) {
                       Rng rng(seed);
                       std::vector<Tensor> xs;
                       Leaves leaves;
                       for (size_t i = 0; i < shapes.size(); ++i) {
                         xs.push_back(random_leaf(rng, shapes[i], range.first, range.second));
                         leaves.emplace_back(name + ".in" + std::to_string(i), xs.back());
                       }
                       return ag::grad_check([&] { return build(xs); }, leaves, {1e-5, 0});
                     }});
  };
  const Shape tf{2, 3, 4};
  loss_case("loss_tf", {tf, tf, tf, tf, tf, tf}, kSigned,
            [](const auto& x) { return loss_tf(x[0], x[1], x[2], x[3], x[4], x[5], 0.7); });
  loss_case("loss_adversarial_g", {{4, 1}}, {0.05, 0.95},
            [](const auto& x) { return loss_adversarial_g(x[0]); });
  loss_case("loss_discriminator", {{4, 1}, {4, 1}, {4, 1}}, {0.05, 0.95},
            [](const auto& x) { return loss_discriminator(x[0], x[1], x[2]); });
  loss_case("loss_time", {{2, 50}, {2, 50}}, kSigned, [](const auto& x) { return loss_time(x[0], x[1]); });
  loss_case("loss_generator_total", {{1}, {1}, {1}}, kPositive, [](const auto& x) {
    LossConfig cfg;
    cfg.gamma_tf = 1.0;
    cfg.gamma_gan = 0.5;
    cfg.gamma_time = 2.0;
    return loss_generator_total(x[0], x[1], x[2], cfg);
  });

  return cases;
}

}  // namespace cmgan
