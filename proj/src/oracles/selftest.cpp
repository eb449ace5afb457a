// SPDX-License-Identifier: Apache-2.0
#include "metaxp/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>

#include "metaxp/decode.hpp"
#include "metaxp/error.hpp"
#include "metaxp/finite_diff.hpp"
#include "metaxp/kernels.hpp"
#include "metaxp/losses.hpp"
#include "metaxp/model.hpp"
#include "metaxp/ops.hpp"
#include "metaxp/oracles.hpp"
#include "metaxp/random.hpp"
#include "metaxp/synth.hpp"
#include "metaxp/trainer.hpp"

namespace metaxp::selftest {

namespace {

using ad::Graph;
using ad::Var;
using Clock = std::chrono::steady_clock;

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
}

Tensor random_log_probs(Rng& rng, std::size_t frames, std::size_t vocab) {
  Graph g;
  return ad::log_softmax(g.constant(random_tensor(rng, {frames, vocab}, -2.0, 2.0))).value();
}

// Scalar probe: sum(weights * y) with fixed random weights, so every
// output element contributes a distinct gradient.
Var probe(Var y, const Tensor& weights) { return ad::reduce_sum(ad::mul(y, y.graph->constant(weights))); }

// 1-parameter loss (theta - target)^2 / 2, independent of the batch.
class QuadraticObjective : public meta::Objective {
 public:
  explicit QuadraticObjective(double target) : target_(target) {}
  double evaluate(const asr::ParameterRegistry& params, std::span<const synth::Utterance* const>,
                  asr::GradientSet& grads, std::uint64_t) override {
    if (grads.size() != params.size()) grads.resize(params.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params.is_frozen(i)) continue;
      const auto& v = params.value(i);
      if (grads[i].empty()) grads[i].assign(v.size(), 0.0);
      for (std::size_t k = 0; k < v.size(); ++k) {
        loss += 0.5 * (v[k] - target_) * (v[k] - target_);
        grads[i][k] += v[k] - target_;
      }
    }
    return loss;
  }

 private:
  double target_;
};

// Records the parameters every support evaluation sees.
class RecordingObjective : public meta::Objective {
 public:
  explicit RecordingObjective(meta::Objective& inner) : inner_(inner) {}
  double evaluate(const asr::ParameterRegistry& params, std::span<const synth::Utterance* const> batch,
                  asr::GradientSet& grads, std::uint64_t seed) override {
    seen.push_back(params);
    return inner_.evaluate(params, batch, grads, seed);
  }
  std::vector<asr::ParameterRegistry> seen;

 private:
  meta::Objective& inner_;
};

asr::ModelConfig tiny_model() {
  asr::ModelConfig c;
  c.num_encoder_blocks = 2;
  c.num_decoder_blocks = 1;
  c.model_dim = 8;
  c.ff_dim = 12;
  c.num_heads = 2;
  c.vocab_size = 6;
  c.feature_dim = 3;
  c.frame_stack = 2;
  c.dropout = 0.0;
  return c;
}

std::vector<synth::Utterance> tiny_data(std::uint64_t seed, std::size_t count) {
  synth::GenerationSpec spec;
  spec.feature_dim = 3;
  spec.num_symbols = 4;
  spec.num_accents = 1;
  spec.seed = seed;
  const auto emissions = synth::make_emissions(spec);
  return synth::generate_domain(synth::source_domain(spec), emissions, count, seed, "selftest");
}

double max_abs_diff(const asr::ParameterRegistry& a, const asr::ParameterRegistry& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a.value(i);
    const auto& y = b.value(i);
    for (std::size_t k = 0; k < x.size(); ++k) worst = std::max(worst, std::abs(x[k] - y[k]));
  }
  return worst;
}

}  // namespace

Outcome ctc_oracle_suite(std::uint64_t seed, std::size_t instances) {
  const auto t0 = Clock::now();
  auto rng = make_rng(seed, {0xc7c});
  double worst_loss = 0.0, worst_grad = 0.0;
  for (std::size_t n = 0; n < instances; ++n) {
    const std::size_t vocab = pick(rng, 2, 4);
    const std::size_t frames = pick(rng, 1, 6);
    std::vector<std::size_t> labels;
    const std::size_t len = pick(rng, 0, 3);
    for (std::size_t i = 0; i < len; ++i) labels.push_back(pick(rng, 1, vocab - 1));
    while (loss::ctc_min_frames(labels) > frames) labels.pop_back();

    const Tensor logits = random_tensor(rng, {frames, vocab}, -2.0, 2.0);
    Graph g;
    const Tensor lp = ad::log_softmax(g.constant(logits)).value();
    const double loss = loss::ctc_forward_backward(lp, labels).loss;
    const double expect = oracle::ctc_nll_enumerated(lp, labels);
    worst_loss = std::max(worst_loss, std::abs(loss - expect) / std::max(std::abs(expect), 1e-300));

    auto check = ad::finite_diff_check(
        [&](Graph&, Var x) { return loss::ctc_loss(ad::log_softmax(x), labels); }, logits, kFdStep);
    worst_grad = std::max(worst_grad, check.max_relative_error);
  }
  Outcome out{"ctc-oracle", worst_loss < kCtcOracleTolerance && worst_grad < kFdTolerance, "", seconds_since(t0)};
  out.detail = std::to_string(instances) + " instances, loss rel err " + sci(worst_loss) + ", grad rel err " +
               sci(worst_grad);
  return out;
}

Outcome autodiff_suite(std::uint64_t seed, std::size_t instances) {
  const auto t0 = Clock::now();
  auto rng = make_rng(seed, {0xad});
  std::map<std::string, double> worst;
  auto run = [&](const std::string& name, const ad::ScalarFn& fn, const Tensor& point,
                 ad::GraphOptions options = {}) {
    const auto check = ad::finite_diff_check(fn, point, kFdStep, options);
    worst[name] = std::max(worst[name], check.max_relative_error);
  };

  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t m = pick(rng, 1, 4), k = pick(rng, 1, 4), c = pick(rng, 2, 5);
    const Tensor a = random_tensor(rng, {m, k});
    const Tensor b = random_tensor(rng, {k, c});
    const Tensor same = random_tensor(rng, {m, k});
    const Tensor row = random_tensor(rng, {k});
    const Tensor w_mc = random_tensor(rng, {m, c});
    const Tensor w_mk = random_tensor(rng, {m, k});
    const Tensor w_km = random_tensor(rng, {k, m});

    run("matmul", [&](Graph& g, Var x) { return probe(ad::matmul(x, g.constant(b)), w_mc); }, a);
    run("matmul", [&](Graph& g, Var x) { return probe(ad::matmul(g.constant(a), x), w_mc); }, b);
    run("add", [&](Graph& g, Var x) { return probe(ad::add(x, g.constant(same)), w_mk); }, a);
    run("add", [&](Graph& g, Var x) { return probe(ad::add(g.constant(a), x), w_mk); }, same);
    run("add", [&](Graph& g, Var x) { return probe(ad::add(g.constant(a), x), w_mk); }, row);
    run("mul", [&](Graph& g, Var x) { return probe(ad::mul(x, g.constant(same)), w_mk); }, a);
    run("mul", [&](Graph& g, Var x) { return probe(ad::mul(g.constant(a), x), w_mk); }, same);
    const double factor = uniform(rng, -2.0, 2.0);
    run("scale", [&](Graph&, Var x) { return probe(ad::scale(x, factor), w_mk); }, a);

    Tensor away = a;  // keep clear of the relu kink
    for (auto& v : away.data()) v += v >= 0.0 ? 0.05 : -0.05;
    run("relu", [&](Graph&, Var x) { return probe(ad::relu(x), w_mk); }, away);

    const Tensor wide = random_tensor(rng, {m, c}, -2.0, 2.0);
    run("softmax", [&](Graph&, Var x) { return probe(ad::softmax(x), w_mc); }, wide);
    run("log_softmax", [&](Graph&, Var x) { return probe(ad::log_softmax(x), w_mc); }, wide);

    // Rows of two normalise to +-1 whatever the input, leaving gradients at
    // the epsilon scale where the relative-error metric is meaningless.
    const std::size_t n = pick(rng, 3, 5);
    const Tensor rows = random_tensor(rng, {m, n}, -2.0, 2.0);
    const Tensor gain = random_tensor(rng, {n}, 0.5, 1.5);
    const Tensor bias = random_tensor(rng, {n});
    const Tensor w_mn = random_tensor(rng, {m, n});
    run("layer_norm",
        [&](Graph& g, Var x) { return probe(ad::layer_norm(x, g.constant(gain), g.constant(bias)), w_mn); }, rows);
    run("layer_norm",
        [&](Graph& g, Var x) { return probe(ad::layer_norm(g.constant(rows), x, g.constant(bias)), w_mn); }, gain);
    run("layer_norm",
        [&](Graph& g, Var x) { return probe(ad::layer_norm(g.constant(rows), g.constant(gain), x), w_mn); }, bias);

    const ad::GraphOptions train{ad::Mode::Train, seed + i};
    run("dropout", [&](Graph&, Var x) { return probe(ad::dropout(x, 0.3), w_mk); }, a, train);

    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < m; ++i) ids.push_back(pick(rng, 0, k - 1));
    const Tensor table = random_tensor(rng, {k, c});
    run("embedding", [&](Graph&, Var x) { return probe(ad::embedding(x, ids), w_mc); }, table);

    const Tensor other_rows = random_tensor(rng, {2, k});
    const Tensor w_rows = random_tensor(rng, {m + 2, k});
    run("concat",
        [&](Graph& g, Var x) {
          const Var parts[] = {x, g.constant(other_rows)};
          return probe(ad::concat(parts, 0), w_rows);
        },
        a);
    const Tensor other_cols = random_tensor(rng, {m, 3});
    const Tensor w_cols = random_tensor(rng, {m, k + 3});
    run("concat",
        [&](Graph& g, Var x) {
          const Var parts[] = {g.constant(other_cols), x};
          return probe(ad::concat(parts, 1), w_cols);
        },
        a);

    const std::size_t begin = pick(rng, 0, c - 1), end = pick(rng, begin + 1, c);
    const Tensor w_slice = random_tensor(rng, {m, end - begin});
    run("slice", [&](Graph&, Var x) { return probe(ad::slice(x, 1, begin, end), w_slice); }, wide);
    const std::size_t rb = pick(rng, 0, m - 1), re = pick(rng, rb + 1, m);
    const Tensor w_rslice = random_tensor(rng, {re - rb, c});
    run("slice", [&](Graph&, Var x) { return probe(ad::slice(x, 0, rb, re), w_rslice); }, wide);

    run("reduce_sum", [&](Graph&, Var x) { return ad::reduce_sum(ad::mul(x, x)); }, a);
    run("reduce_mean", [&](Graph&, Var x) { return ad::reduce_mean(ad::mul(x, x)); }, a);
    run("transpose", [&](Graph&, Var x) { return probe(ad::transpose(x), w_km); }, a);
  }

  double overall = 0.0;
  std::string worst_op;
  for (const auto& [name, err] : worst) {
    if (err >= overall) {
      overall = err;
      worst_op = name;
    }
  }
  Outcome out{"autodiff", overall < kFdTolerance, "", seconds_since(t0)};
  out.detail = std::to_string(worst.size()) + " ops x " + std::to_string(instances) + " instances, max rel err " +
               sci(overall) + " (" + worst_op + ")";
  return out;
}

Outcome maml_arithmetic_suite(std::uint64_t seed) {
  const auto t0 = Clock::now();
  std::string detail;
  bool ok = true;

  // theta = 1, target 5: theta' = 1 + 0.1 * 4 = 1.4; support gradient at
  // theta' is -3.6, so theta = 1 + 0.1 * 3.6 = 1.36.
  asr::ParameterRegistry theta;
  theta.add("theta", Tensor(Shape{1}, 1.0));
  QuadraticObjective quad(5.0);
  const std::vector<std::vector<const synth::Utterance*>> no_batches(1);
  const auto adapted = meta::inner_update(quad, theta, no_batches, 0.1, 0.0, seed);
  const double inner = adapted.adapted.value(0)[0];
  meta::outer_update(quad, theta, adapted.adapted, {}, 0.1, 0.0, seed);
  const double outer = theta.value(0)[0];
  ok = ok && std::abs(inner - 1.4) <= kExactTolerance && std::abs(outer - 1.36) <= kExactTolerance;
  detail += "theta'=" + std::to_string(inner) + " theta=" + std::to_string(outer);

  // alpha = 0: one MAML epoch against SGD on the same support batches.
  const auto data = tiny_data(seed, 16);
  meta::TrainerConfig cfg;
  cfg.method = meta::Method::MAML;
  cfg.alpha = 0.0;
  cfg.beta = 4.0;
  cfg.batch_size = 3;
  cfg.epochs = 1;
  cfg.warmup_steps = 4;
  cfg.rng_seed = seed;
  const asr::AsrModel init = asr::build_model(tiny_model(), seed);
  meta::HybridObjective hybrid(init.config, loss::LossConfig{});

  asr::ParameterRegistry maml_params = init.params;
  RecordingObjective recorder(hybrid);
  meta::train(cfg, recorder, maml_params, init.config.model_dim, data);
  // The recorder sees inner and support evaluations alternately (one inner
  // step per iteration); keep the support ones.
  std::vector<asr::ParameterRegistry> maml_path;
  for (std::size_t i = 1; i < recorder.seen.size(); i += 2) maml_path.push_back(recorder.seen[i]);

  asr::ParameterRegistry sgd_params = init.params;
  const auto split = meta::split_epoch(data.size(), cfg.support_fraction, 0, cfg.rng_seed);
  double worst = 0.0;
  std::size_t step = 0;
  for (const auto& it : meta::meta_schedule(split, cfg)) {
    if (step < maml_path.size()) worst = std::max(worst, max_abs_diff(maml_path[step], sgd_params));
    ++step;
    std::vector<const synth::Utterance*> batch;
    for (auto i : it.support) batch.push_back(&data[i]);
    asr::GradientSet grads;
    hybrid.evaluate(sgd_params, batch, grads, 0);
    meta::clip_gradients(grads, cfg.clip_norm);
    meta::sgd_apply(sgd_params, grads, cfg.beta * meta::noam_lr(step, init.config.model_dim, cfg.warmup_steps));
  }
  worst = std::max(worst, max_abs_diff(maml_params, sgd_params));
  ok = ok && step == maml_path.size() && worst <= kExactTolerance;
  detail += ", alpha=0 epoch vs SGD: " + std::to_string(step) + " steps, max diff " + sci(worst);
  return Outcome{"maml-arithmetic", ok, detail, seconds_since(t0)};
}

Outcome regularizer_suite(std::uint64_t seed, std::size_t kl_pairs) {
  const auto t0 = Clock::now();
  auto rng = make_rng(seed, {0x7e9});

  asr::AsrModel model = asr::build_model(tiny_model(), seed);
  model.params.take_snapshot();
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    for (auto& v : model.params.value(i).data()) v += uniform(rng, -0.5, 0.5);
  }
  asr::apply_freeze_policy(model.params, asr::FreezePolicy::default_for(model.config));
  const double weight = 0.37;
  Graph g;
  asr::BoundParameters bound(g, model.params, true);
  g.backward(loss::wca_penalty(bound, weight));
  asr::GradientSet grads;
  bound.accumulate_gradients(grads);
  double wca_err = 0.0;
  bool frozen_clean = true;
  const auto& anchor = model.params.snapshot();
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    if (model.params.is_frozen(i)) {
      frozen_clean = frozen_clean && grads[i].empty();
      continue;
    }
    for (std::size_t k = 0; k < grads[i].size(); ++k) {
      const double expect = weight * (model.params.value(i)[k] - anchor[i][k]);
      wca_err = std::max(wca_err, std::abs(grads[i][k] - expect));
    }
  }

  double min_kl = INFINITY, max_self = 0.0;
  for (std::size_t n = 0; n < kl_pairs; ++n) {
    const std::size_t rows = pick(rng, 1, 5), vocab = pick(rng, 2, 6);
    const Tensor teacher = random_log_probs(rng, rows, vocab);
    const Tensor student = random_log_probs(rng, rows, vocab);
    Graph kg;
    min_kl = std::min(min_kl, loss::kld_penalty(kg.constant(student), teacher, 1.0).value().item());
    max_self = std::max(max_self, std::abs(loss::kld_penalty(kg.constant(teacher), teacher, 1.0).value().item()));
  }
  Outcome out{"regularizers", wca_err < kExactTolerance && frozen_clean && min_kl >= 0.0 && max_self <= kExactTolerance,
              "", seconds_since(t0)};
  out.detail = "WCA grad err " + sci(wca_err) + ", min KL " + sci(min_kl) + " over " + std::to_string(kl_pairs) +
               " pairs, |KL(p||p)| <= " + sci(max_self);
  return out;
}

Outcome decode_suite(std::uint64_t seed, std::size_t beam_instances) {
  const auto t0 = Clock::now();
  std::vector<oracle::Sequence> all{{}};
  for (std::size_t len = 1; len <= 4; ++len) {
    std::vector<oracle::Sequence> grown;
    for (const auto& s : all) {
      if (s.size() != len - 1) continue;
      for (std::size_t c = 1; c <= 4; ++c) {
        auto t = s;
        t.push_back(c);
        grown.push_back(std::move(t));
      }
    }
    all.insert(all.end(), grown.begin(), grown.end());
  }
  std::size_t cer_mismatch = 0, pairs = 0;
  for (const auto& ref : all) {
    for (const auto& hyp : all) {
      const std::size_t d = eval::edit_distance(ref, hyp);
      ++pairs;
      if (d != oracle::edit_distance_recursive(ref, hyp)) ++cer_mismatch;
      if (!ref.empty() && eval::cer(ref, hyp) != static_cast<double>(d) / static_cast<double>(ref.size())) {
        ++cer_mismatch;
      }
    }
  }

  auto rng = make_rng(seed, {0xdec});
  std::size_t beam_mismatch = 0;
  eval::DecodeConfig beam{eval::DecodeMode::PrefixBeam, 8};
  for (std::size_t n = 0; n < beam_instances; ++n) {
    const Tensor lp = random_log_probs(rng, pick(rng, 1, 4), pick(rng, 2, 3));
    const auto exact = oracle::ctc_decode_enumerated(lp);
    const auto got = eval::prefix_beam_decode(lp, beam);
    const double got_lp = oracle::ctc_log_prob_enumerated(lp, got);
    if (got != exact.best && std::abs(got_lp - exact.log_prob) > 1e-12) ++beam_mismatch;
  }
  Outcome out{"decode-cer", cer_mismatch == 0 && beam_mismatch == 0, "", seconds_since(t0)};
  out.detail = std::to_string(pairs) + " CER pairs (" + std::to_string(cer_mismatch) + " mismatches), prefix beam " +
               std::to_string(beam_instances - beam_mismatch) + "/" + std::to_string(beam_instances) +
               " match exhaustive decode";
  return out;
}

Outcome kernel_suite(std::uint64_t seed) {
  const auto t0 = Clock::now();
  if (!kernels::backend_supported(kernels::Backend::Avx2)) {
    return Outcome{"kernels", true, "AVX2 unavailable; scalar only", seconds_since(t0)};
  }
  auto rng = make_rng(seed, {0x4e});
  double worst = 0.0;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };
  for (std::size_t n = 0; n < 200; ++n) {
    const std::size_t m = pick(rng, 1, 37), k = pick(rng, 1, 37), c = pick(rng, 1, 37);
    std::vector<double> a(m * k), b(k * c), bt(c * k), at(k * m), x(k), y(k);
    for (auto* v : {&a, &b, &bt, &at, &x, &y}) {
      for (auto& e : *v) e = uniform(rng, -1.0, 1.0);
    }
    std::vector<double> c1(m * c, 0.5), c2(m * c, 0.5);
    kernels::scalar::gemm_nn(m, c, k, a.data(), b.data(), c1.data());
    kernels::avx2::gemm_nn(m, c, k, a.data(), b.data(), c2.data());
    for (std::size_t i = 0; i < c1.size(); ++i) worst = std::max(worst, rel(c2[i], c1[i]));
    std::fill(c1.begin(), c1.end(), 0.0);
    std::fill(c2.begin(), c2.end(), 0.0);
    kernels::scalar::gemm_nt(m, c, k, a.data(), bt.data(), c1.data());
    kernels::avx2::gemm_nt(m, c, k, a.data(), bt.data(), c2.data());
    for (std::size_t i = 0; i < c1.size(); ++i) worst = std::max(worst, rel(c2[i], c1[i]));
    std::fill(c1.begin(), c1.end(), 0.0);
    std::fill(c2.begin(), c2.end(), 0.0);
    kernels::scalar::gemm_tn(m, c, k, at.data(), b.data(), c1.data());
    kernels::avx2::gemm_tn(m, c, k, at.data(), b.data(), c2.data());
    for (std::size_t i = 0; i < c1.size(); ++i) worst = std::max(worst, rel(c2[i], c1[i]));
    worst = std::max(worst, rel(kernels::avx2::dot(k, x.data(), y.data()), kernels::scalar::dot(k, x.data(), y.data())));
    auto y1 = y, y2 = y;
    kernels::scalar::axpy(k, 0.3, x.data(), y1.data());
    kernels::avx2::axpy(k, 0.3, x.data(), y2.data());
    kernels::scalar::scale(k, -1.7, y1.data());
    kernels::avx2::scale(k, -1.7, y2.data());
    for (std::size_t i = 0; i < k; ++i) worst = std::max(worst, rel(y2[i], y1[i]));
  }
  return Outcome{"kernels", worst < 1e-12, "scalar vs AVX2 max rel diff " + sci(worst), seconds_since(t0)};
}

std::vector<Outcome> run_all(std::uint64_t seed) {
  return {kernel_suite(seed),         ctc_oracle_suite(seed),        autodiff_suite(seed),
          maml_arithmetic_suite(seed), regularizer_suite(seed), decode_suite(seed)};
}

}  // namespace metaxp::selftest
