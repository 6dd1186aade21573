#include "modelctl/toy_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>

#include "modelctl/errors.hpp"

namespace modelctl {
using ad::Matrix;
using ad::Tape;
using ad::Var;
using nlohmann::json;

namespace {

enum Param : int {
  kEncW1,
  kEncB1,
  kEncW2,
  kEncB2,
  kEncWk,
  kDecEmbed,
  kCondTask,
  kCondAudio,
  kCondB,
  kDecWs0,
  kDecBs0,
  kDecWq,
  kDecWl,
  kDecLoc,
  kDecV,
  kGruWz,
  kGruUz,
  kGruBz,
  kGruWr,
  kGruUr,
  kGruBr,
  kGruWh,
  kGruUh,
  kGruBh,
  kOutWs,
  kOutWc,
  kOutWq,
  kOutB,
  kOutW,
  kOutBias,
  kParamCount
};

constexpr const char* kParamNames[kParamCount] = {
    "enc.w1",   "enc.b1",   "enc.w2",  "enc.b2",  "enc.wk", "dec.embed", "cond.task", "cond.audio",
    "cond.b",   "dec.ws0",  "dec.bs0", "dec.wq",  "dec.wl", "dec.loc",   "dec.v",     "gru.wz",
    "gru.uz",   "gru.bz",   "gru.wr",  "gru.ur",  "gru.br", "gru.wh",    "gru.uh",    "gru.bh",
    "out.ws",   "out.wc",   "out.wq",  "out.b",   "out.w",  "out.bias"};

struct Shape {
  int rows, cols;
  bool bias;
};

std::vector<Shape> parameter_shapes(const ToyModelConfig& c) {
  const int v = c.vocabulary().size();
  const int in = c.embed_dim + c.enc_hidden + c.cond_dim;
  return {
      {c.n_bins, c.enc_hidden, false},
      {1, c.enc_hidden, true},
      {c.conv_taps * c.enc_hidden, c.enc_hidden, false},
      {1, c.enc_hidden, true},
      {c.enc_hidden, c.attn_dim, false},
      {v, c.embed_dim, false},
      {c.embed_dim, c.cond_dim, false},
      {c.enc_hidden, c.cond_dim, false},
      {1, c.cond_dim, true},
      {c.cond_dim, c.dec_hidden, false},
      {1, c.dec_hidden, true},
      {c.dec_hidden, c.attn_dim, false},
      {c.loc_channels, c.attn_dim, false},
      {c.loc_taps, c.loc_channels, false},
      {c.attn_dim, 1, false},
      {in, c.dec_hidden, false},
      {c.dec_hidden, c.dec_hidden, false},
      {1, c.dec_hidden, true},
      {in, c.dec_hidden, false},
      {c.dec_hidden, c.dec_hidden, false},
      {1, c.dec_hidden, true},
      {in, c.dec_hidden, false},
      {c.dec_hidden, c.dec_hidden, false},
      {1, c.dec_hidden, true},
      {c.dec_hidden, c.out_hidden, false},
      {c.enc_hidden, c.out_hidden, false},
      {c.cond_dim, c.out_hidden, false},
      {1, c.out_hidden, true},
      {c.out_hidden, v, false},
      {1, v, true},
  };
}

std::size_t edit_distance(const std::vector<TokenId>& a, const std::vector<TokenId>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

Matrix column_from(const Waveform& audio) {
  Matrix col(static_cast<Eigen::Index>(audio.frames()), 1);
  for (std::size_t i = 0; i < audio.frames(); ++i) {
    col(static_cast<Eigen::Index>(i), 0) = audio.samples[i];
  }
  return col;
}

TokenSequence with_end(const TokenSequence& seq, TokenId end) {
  TokenSequence out = seq;
  out.tokens.push_back(end);
  return out;
}

}  // namespace

void ToyModelConfig::validate() const {
  if (alphabet_size < 1) throw InvalidArgument("alphabet_size must be positive");
  if (sample_rate <= 0) throw InvalidArgument("sample_rate must be positive");
  if (window < 1 || n_bins < 1) throw InvalidArgument("window and n_bins must be positive");
  if (bin_spacing_hz * n_bins > sample_rate / 2.0 + 1e-9) {
    throw InvalidArgument("analysis bins exceed Nyquist");
  }
  if (conv_taps % 2 == 0 || loc_taps % 2 == 0) throw InvalidArgument("tap counts must be odd");
  if (enc_hidden < 1 || dec_hidden < 1 || embed_dim < 1 || attn_dim < 1 || loc_channels < 1 ||
      out_hidden < 1 || cond_dim < 1) {
    throw InvalidArgument("layer widths must be positive");
  }
  if (enc_hidden > 128 || dec_hidden > 128) throw InvalidArgument("hidden width is capped at 128");
  if (max_decode_len < 1) throw InvalidArgument("max_decode_len must be positive");
  if (batch_size < 1) throw InvalidArgument("batch_size must be positive");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw InvalidArgument("holdout_fraction must lie in (0, 1)");
  }
}

json ToyModelConfig::to_json() const {
  return {{"alphabet_size", alphabet_size},   {"sample_rate", sample_rate},
          {"source_lang", source_lang},       {"max_frames", max_frames},
          {"window", window},                 {"n_bins", n_bins},
          {"bin_spacing_hz", bin_spacing_hz}, {"log_floor", log_floor},
          {"enc_hidden", enc_hidden},         {"conv_taps", conv_taps},
          {"dec_hidden", dec_hidden},         {"embed_dim", embed_dim},
          {"attn_dim", attn_dim},             {"loc_channels", loc_channels},
          {"loc_taps", loc_taps},             {"cond_dim", cond_dim},             {"out_hidden", out_hidden},
          {"max_decode_len", max_decode_len}, {"learning_rate", learning_rate},
          {"batch_size", batch_size},         {"max_steps", max_steps},
          {"eval_every", eval_every},         {"target_accuracy", target_accuracy},
          {"holdout_fraction", holdout_fraction}, {"grad_clip", grad_clip},
          {"seed", seed}};
}

ToyModelConfig ToyModelConfig::from_json(const json& j) {
  ToyModelConfig c;
  const auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("alphabet_size", c.alphabet_size);
  get("sample_rate", c.sample_rate);
  get("source_lang", c.source_lang);
  get("max_frames", c.max_frames);
  get("window", c.window);
  get("n_bins", c.n_bins);
  get("bin_spacing_hz", c.bin_spacing_hz);
  get("log_floor", c.log_floor);
  get("enc_hidden", c.enc_hidden);
  get("conv_taps", c.conv_taps);
  get("dec_hidden", c.dec_hidden);
  get("embed_dim", c.embed_dim);
  get("attn_dim", c.attn_dim);
  get("loc_channels", c.loc_channels);
  get("loc_taps", c.loc_taps);
  get("cond_dim", c.cond_dim);
  get("out_hidden", c.out_hidden);
  get("max_decode_len", c.max_decode_len);
  get("learning_rate", c.learning_rate);
  get("batch_size", c.batch_size);
  get("max_steps", c.max_steps);
  get("eval_every", c.eval_every);
  get("target_accuracy", c.target_accuracy);
  get("holdout_fraction", c.holdout_fraction);
  get("grad_clip", c.grad_clip);
  get("seed", c.seed);
  return c;
}

json ToyTrainingReport::to_json() const {
  return {{"reached_target", reached_target},
          {"steps", steps},
          {"tc_token_accuracy", tc_token_accuracy},
          {"tl_token_accuracy", tl_token_accuracy},
          {"tc_sequence_accuracy", tc_sequence_accuracy},
          {"tl_sequence_accuracy", tl_sequence_accuracy},
          {"final_loss", final_loss},
          {"warnings", warnings}};
}

ToyTrainingReport ToyTrainingReport::from_json(const json& j) {
  ToyTrainingReport r;
  r.reached_target = j.value("reached_target", false);
  r.steps = j.value("steps", 0L);
  r.tc_token_accuracy = j.value("tc_token_accuracy", 0.0);
  r.tl_token_accuracy = j.value("tl_token_accuracy", 0.0);
  r.tc_sequence_accuracy = j.value("tc_sequence_accuracy", 0.0);
  r.tl_sequence_accuracy = j.value("tl_sequence_accuracy", 0.0);
  r.final_loss = j.value("final_loss", 0.0);
  r.warnings = j.value("warnings", std::vector<std::string>{});
  return r;
}

ToyModel::ToyModel(ToyModelConfig config) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto shapes = parameter_shapes(config_);
  params_.reserve(shapes.size());
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& s = shapes[i];
    Matrix m = Matrix::Zero(s.rows, s.cols);
    if (!s.bias) {
      const double stddev = 1.0 / std::sqrt(static_cast<double>(s.rows));
      for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = stddev * normal(rng);
    }
    params_.push_back({kParamNames[i], std::move(m)});
  }

  const int w = config_.window;
  basis_.resize(w, 2 * config_.n_bins);
  for (int n = 0; n < w; ++n) {
    const double hann = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / w);
    for (int b = 0; b < config_.n_bins; ++b) {
      const double f = config_.bin_spacing_hz * (b + 1);
      const double phase = 2.0 * std::numbers::pi * f * n / config_.sample_rate;
      basis_(n, b) = hann * std::cos(phase);
      basis_(n, config_.n_bins + b) = hann * std::sin(phase);
    }
  }
}

std::uint64_t ToyModel::checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& p : params_) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(p.value.size()) * sizeof(double); ++i) {
      h = (h ^ bytes[i]) * 1099511628211ull;
    }
  }
  return h;
}

Matrix ToyModel::features(const Waveform& audio) const {
  Tape tape;
  ToyGraph graph(*this, tape, false);
  return graph.features(tape.constant(column_from(audio))).value();
}

ToyGraph::ToyGraph(const ToyModel& model, Tape& tape, bool trainable) : model_(model), tape_(tape) {
  params_.reserve(model.parameters().size());
  for (const auto& p : model.parameters()) {
    params_.push_back(trainable ? tape.variable(p.value) : tape.constant(p.value));
  }
  basis_ = tape.constant(model.analysis_basis());
}

Var ToyGraph::features(Var audio_column) {
  const auto& c = model_.config();
  if (audio_column.rows() == 0) throw InvalidArgument("toy model needs at least one frame");
  const Var spectrum = ad::matmul(ad::frame(audio_column, c.window), basis_);
  const Var power = ad::add(ad::square(ad::cols(spectrum, 0, c.n_bins)),
                            ad::square(ad::cols(spectrum, c.n_bins, c.n_bins)));
  // log power is mapped to roughly [-1.5, 1.5] for tones near 0.1 amplitude.
  return ad::scale(ad::shift(ad::log_offset(power, c.log_floor), 1.0), 1.0 / 3.0);
}

ToyGraph::Encoded ToyGraph::encode(Var features) {
  const auto& c = model_.config();
  const Var projected = ad::add_row(ad::matmul(features, p(kEncW1)), p(kEncB1));
  const Var local = ad::tanh(projected);
  const Var summary = ad::mean_rows(projected);
  const Var states =
      ad::tanh(ad::add_row(ad::matmul(ad::shift_stack(local, c.conv_taps), p(kEncW2)), p(kEncB2)));
  return {states, ad::matmul(states, p(kEncWk)), summary};
}

ToyGraph::State ToyGraph::initial_state(const Encoded& enc, TaskTag task) {
  const auto vocab = model_.vocabulary();
  const Var task_embedding = ad::gather_row(p(kDecEmbed), vocab.task(task));
  const Var condition = ad::tanh(ad::add(
      ad::add(ad::matmul(task_embedding, p(kCondTask)), ad::matmul(enc.summary, p(kCondAudio))),
      p(kCondB)));
  const Var hidden = ad::tanh(ad::add(ad::matmul(condition, p(kDecWs0)), p(kDecBs0)));
  return {hidden, tape_.constant(Matrix::Zero(enc.states.rows(), 1)), condition};
}

std::pair<ToyGraph::State, Var> ToyGraph::step(const Encoded& enc, const State& state, TokenId token) {
  const auto& c = model_.config();
  const Var location = ad::matmul(ad::shift_stack(state.alignment, c.loc_taps), p(kDecLoc));
  const Var pre = ad::add_row(ad::add(enc.keys, ad::matmul(location, p(kDecWl))),
                              ad::matmul(state.hidden, p(kDecWq)));
  const Var alignment = ad::softmax_column(ad::matmul(ad::tanh(pre), p(kDecV)));
  const Var context = ad::matmul(ad::transpose(alignment), enc.states);

  const Var input = ad::concat_cols(
      ad::concat_cols(ad::gather_row(p(kDecEmbed), token), context), state.condition);
  const Var h = state.hidden;
  const Var z = ad::sigmoid(ad::add(ad::add(ad::matmul(input, p(kGruWz)), ad::matmul(h, p(kGruUz))), p(kGruBz)));
  const Var r = ad::sigmoid(ad::add(ad::add(ad::matmul(input, p(kGruWr)), ad::matmul(h, p(kGruUr))), p(kGruBr)));
  const Var cand = ad::tanh(
      ad::add(ad::add(ad::matmul(input, p(kGruWh)), ad::matmul(ad::mul(r, h), p(kGruUh))), p(kGruBh)));
  const Var hidden = ad::add(ad::mul(ad::one_minus(z), h), ad::mul(z, cand));

  const Var out = ad::tanh(ad::add(
      ad::add(ad::add(ad::matmul(hidden, p(kOutWs)), ad::matmul(context, p(kOutWc))),
              ad::matmul(state.condition, p(kOutWq))),
      p(kOutB)));
  const Var logits = ad::add(ad::matmul(out, p(kOutW)), p(kOutBias));
  return {State{hidden, alignment, state.condition}, logits};
}

std::pair<ToyGraph::State, Var> ToyGraph::run_prompt(const Encoded& enc, TaskTag task) {
  const auto vocab = model_.vocabulary();
  State state = initial_state(enc, task);
  Var logits;
  for (TokenId t : {vocab.start(), vocab.lang()}) std::tie(state, logits) = step(enc, state, t);
  return {state, logits};
}

Var ToyGraph::sequence_nll(const Encoded& enc, TaskTag task, const TokenSequence& target,
                           std::vector<double>* per_step) {
  auto [state, logits] = run_prompt(enc, task);
  Var total = tape_.constant(Matrix::Zero(1, 1));
  for (std::size_t m = 0; m < target.tokens.size(); ++m) {
    const Var term = ad::nll_from_logits(logits, target.tokens[m]);
    if (per_step) per_step->push_back(term.scalar());
    total = ad::add(total, term);
    if (m + 1 < target.tokens.size()) std::tie(state, logits) = step(enc, state, target.tokens[m]);
  }
  return total;
}

DecodeResult ToyGraph::greedy_decode(const Encoded& enc, TaskTag task) {
  const auto vocab = model_.vocabulary();
  auto [state, logits] = run_prompt(enc, task);
  DecodeResult result;
  for (int m = 0; m < model_.config().max_decode_len; ++m) {
    const auto& z = logits.value();
    Eigen::Index best = 0;
    z.row(0).maxCoeff(&best);
    const double peak = z(0, best);
    const double lse = peak + std::log((z.array() - peak).exp().sum());
    const auto token = static_cast<TokenId>(best);
    result.sequence.tokens.push_back(token);
    result.step_nll.push_back(lse - peak);
    if (token == vocab.end()) {
      result.terminated = true;
      break;
    }
    std::tie(state, logits) = step(enc, state, token);
  }
  return result;
}

ToyAdapter::ToyAdapter(ToyModel model) : model_(std::move(model)), language_(model_.config().source_lang) {}

void ToyAdapter::set_language(const std::string& lang) {
  if (lang != model_.config().source_lang) {
    throw InvalidArgument("toy adapter only knows language '" + model_.config().source_lang + "'");
  }
  language_ = lang;
}

void ToyAdapter::check_nonempty(const Waveform& audio) const {
  if (audio.frames() == 0) throw InvalidArgument("toy adapter rejects empty audio");
}

NllResult ToyAdapter::teacher_forced_nll(const Waveform& audio, const TokenSequence& target,
                                         TaskTag task) const {
  check_audio(audio);
  check_nonempty(audio);
  check_tokens(target);
  Tape tape;
  ToyGraph graph(model_, tape, false);
  const Var input = tape.variable(column_from(audio));
  const auto enc = graph.encode(graph.features(input));
  const Var loss = graph.sequence_nll(enc, task, target);
  tape.backward(loss);
  const Matrix g = tape.grad(input);
  NllResult out;
  out.nll = loss.scalar();
  out.grad.assign(g.data(), g.data() + g.size());
  return out;
}

double ToyAdapter::nll(const Waveform& audio, const TokenSequence& target, TaskTag task) const {
  check_audio(audio);
  check_nonempty(audio);
  check_tokens(target);
  Tape tape;
  ToyGraph graph(model_, tape, false);
  const auto enc = graph.encode(graph.features(tape.constant(column_from(audio))));
  return graph.sequence_nll(enc, task, target).scalar();
}

DecodeResult ToyAdapter::decode(const Waveform& audio, TaskTag task) const {
  check_audio(audio);
  check_nonempty(audio);
  Tape tape;
  ToyGraph graph(model_, tape, false);
  const auto enc = graph.encode(graph.features(tape.constant(column_from(audio))));
  return graph.greedy_decode(enc, task);
}

std::string ToyAdapter::detokenize(const TokenSequence& sequence) const {
  check_tokens(sequence);
  return model_.vocabulary().render(sequence);
}

std::vector<ToyExample> to_toy_examples(const std::vector<SyntheticUtterance>& utterances) {
  std::vector<ToyExample> out;
  out.reserve(utterances.size());
  for (const auto& u : utterances) out.push_back({u.audio, u.source, u.target});
  return out;
}

namespace {

struct Accuracy {
  double tc_token = 0, tl_token = 0, tc_seq = 0, tl_seq = 0;
};

Accuracy evaluate_accuracy(const ToyModel& model, const std::vector<const ToyExample*>& holdout,
                           const std::vector<Matrix>& feats) {
  const auto vocab = model.vocabulary();
  std::size_t ref_tokens = 0, tc_err = 0, tl_err = 0, tc_ok = 0, tl_ok = 0;
  for (std::size_t i = 0; i < holdout.size(); ++i) {
    Tape tape;
    ToyGraph graph(model, tape, false);
    const auto enc = graph.encode(tape.constant(feats[i]));
    const auto tc = with_end(holdout[i]->source, vocab.end());
    const auto tl = with_end(holdout[i]->target, vocab.end());
    const auto dtc = graph.greedy_decode(enc, TaskTag::kTranscribe).sequence;
    const auto dtl = graph.greedy_decode(enc, TaskTag::kTranslate).sequence;
    ref_tokens += tc.size();
    tc_err += edit_distance(tc.tokens, dtc.tokens);
    tl_err += edit_distance(tl.tokens, dtl.tokens);
    tc_ok += dtc == tc ? 1 : 0;
    tl_ok += dtl == tl ? 1 : 0;
  }
  Accuracy a;
  const double n = static_cast<double>(holdout.size());
  a.tc_token = std::max(0.0, 1.0 - static_cast<double>(tc_err) / static_cast<double>(ref_tokens));
  a.tl_token = std::max(0.0, 1.0 - static_cast<double>(tl_err) / static_cast<double>(ref_tokens));
  a.tc_seq = static_cast<double>(tc_ok) / n;
  a.tl_seq = static_cast<double>(tl_ok) / n;
  return a;
}

}  // namespace

ToyModel train_toy_model(const ToyModelConfig& config, const std::vector<ToyExample>& dataset,
                         const std::function<void(const ToyTrainingReport&)>& on_eval) {
  config.validate();
  if (dataset.size() < 2) throw InvalidArgument("toy training needs at least two examples");
  ToyModel model(config);
  const auto vocab = model.vocabulary();
  for (const auto& ex : dataset) {
    if (ex.audio.sample_rate != config.sample_rate) throw SampleRateMismatch("training audio rate");
    for (TokenId t : ex.source.tokens) {
      if (!vocab.is_source(t)) throw OutOfVocabulary("source token " + std::to_string(t));
    }
    for (TokenId t : ex.target.tokens) {
      if (!vocab.is_target(t)) throw OutOfVocabulary("target token " + std::to_string(t));
    }
  }

  const auto n_holdout = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(config.holdout_fraction * static_cast<double>(dataset.size()))));
  const std::size_t n_train = dataset.size() - n_holdout;
  if (n_train == 0) throw InvalidArgument("holdout leaves no training examples");

  std::vector<Matrix> feats;
  feats.reserve(dataset.size());
  for (const auto& ex : dataset) feats.push_back(model.features(ex.audio));
  std::vector<const ToyExample*> holdout;
  std::vector<Matrix> holdout_feats;
  for (std::size_t i = n_train; i < dataset.size(); ++i) {
    holdout.push_back(&dataset[i]);
    holdout_feats.push_back(feats[i]);
  }

  auto& params = model.mutable_parameters();
  std::vector<Matrix> m1, m2;
  for (const auto& p : params) {
    m1.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    m2.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  }
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  std::mt19937_64 rng(config.seed ^ 0x9E3779B97F4A7C15ull);
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  ToyTrainingReport report;
  double running_loss = 0.0;
  long step = 0;
  for (step = 1; step <= config.max_steps; ++step) {
    Tape tape;
    ToyGraph graph(model, tape, true);
    Var loss = tape.constant(Matrix::Zero(1, 1));
    for (int b = 0; b < config.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      const auto& ex = dataset[idx];
      const auto enc = graph.encode(tape.constant(feats[idx]));
      const auto tc = with_end(ex.source, vocab.end());
      const auto tl = with_end(ex.target, vocab.end());
      const Var l_tc = ad::scale(graph.sequence_nll(enc, TaskTag::kTranscribe, tc), 1.0 / static_cast<double>(tc.size()));
      const Var l_tl = ad::scale(graph.sequence_nll(enc, TaskTag::kTranslate, tl), 1.0 / static_cast<double>(tl.size()));
      loss = ad::add(loss, ad::add(l_tc, l_tl));
    }
    loss = ad::scale(loss, 0.5 / config.batch_size);
    tape.backward(loss);
    running_loss = step == 1 ? loss.scalar() : 0.98 * running_loss + 0.02 * loss.scalar();

    std::vector<Matrix> grads;
    double norm2 = 0.0;
    for (const Var v : graph.parameter_vars()) {
      grads.push_back(tape.grad(v));
      norm2 += grads.back().squaredNorm();
    }
    const double norm = std::sqrt(norm2);
    const double clip = (config.grad_clip > 0.0 && norm > config.grad_clip) ? config.grad_clip / norm : 1.0;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Matrix g = grads[i] * clip;
      m1[i] = beta1 * m1[i] + (1.0 - beta1) * g;
      m2[i] = beta2 * m2[i] + (1.0 - beta2) * g.cwiseProduct(g);
      params[i].value.array() -= config.learning_rate * (m1[i].array() / bc1) /
                                 ((m2[i].array() / bc2).sqrt() + adam_eps);
    }

    if (step % config.eval_every == 0 || step == config.max_steps) {
      const auto acc = evaluate_accuracy(model, holdout, holdout_feats);
      report.tc_token_accuracy = acc.tc_token;
      report.tl_token_accuracy = acc.tl_token;
      report.tc_sequence_accuracy = acc.tc_seq;
      report.tl_sequence_accuracy = acc.tl_seq;
      report.steps = step;
      report.final_loss = running_loss;
      if (on_eval) on_eval(report);
      const double worst = std::min({acc.tc_token, acc.tl_token, acc.tc_seq, acc.tl_seq});
      if (worst >= config.target_accuracy) {
        report.reached_target = true;
        break;
      }
    }
  }
  if (!report.reached_target) {
    report.warnings.push_back("degraded model: held-out accuracy below " +
                              std::to_string(config.target_accuracy) + " after " +
                              std::to_string(report.steps) + " steps");
  }
  model.set_training_report(std::move(report));
  return model;
}

namespace {

constexpr char kMagic[8] = {'M', 'C', 'T', 'O', 'Y', 'M', 'D', 'L'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 4);
}

void put_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(b, 8);
}

class Reader {
 public:
  explicit Reader(std::vector<unsigned char> bytes) : bytes_(std::move(bytes)) {}
  const unsigned char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw CorruptFile("toy checkpoint truncated");
    const auto* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32() {
    const auto* p = take(4);
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }
  double f64() {
    const auto* p = take(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<double>(bits);
  }
  std::string str(std::size_t n) {
    const auto* p = take(n);
    return {reinterpret_cast<const char*>(p), n};
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::vector<unsigned char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_toy_model(const ToyModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  const json header = {{"format", "modelctl-toy"},
                       {"config", model.config().to_json()},
                       {"training", model.training_report().to_json()}};
  const std::string text = header.dump();
  out.write(kMagic, sizeof kMagic);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_u32(out, static_cast<std::uint32_t>(model.parameters().size()));
  for (const auto& p : model.parameters()) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_u32(out, static_cast<std::uint32_t>(p.value.rows()));
    put_u32(out, static_cast<std::uint32_t>(p.value.cols()));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) put_f64(out, p.value.data()[i]);
  }
  if (!out) throw Error("short write to " + path.string());
}

ToyModel load_toy_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open toy checkpoint " + path.string());
  Reader r({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()});
  if (std::memcmp(r.take(sizeof kMagic), kMagic, sizeof kMagic) != 0) {
    throw CorruptFile(path.string() + ": not a toy model checkpoint");
  }
  const auto version = r.u32();
  if (version != kVersion) throw CorruptFile("unsupported toy checkpoint version " + std::to_string(version));
  json header;
  try {
    header = json::parse(r.str(r.u32()));
  } catch (const json::exception& e) {
    throw CorruptFile(std::string("bad checkpoint header: ") + e.what());
  }
  ToyModel model(ToyModelConfig::from_json(header.at("config")));
  model.set_training_report(ToyTrainingReport::from_json(header.value("training", json::object())));
  auto& params = model.mutable_parameters();
  const auto count = r.u32();
  if (count != params.size()) throw CorruptFile("checkpoint parameter count mismatch");
  for (auto& p : params) {
    const std::string name = r.str(r.u32());
    const auto rows = r.u32();
    const auto cols = r.u32();
    if (name != p.name || rows != p.value.rows() || cols != p.value.cols()) {
      throw CorruptFile("checkpoint tensor '" + name + "' does not match the configured architecture");
    }
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = r.f64();
  }
  if (!r.done()) throw CorruptFile("trailing bytes in toy checkpoint");
  return model;
}

}  // namespace modelctl
