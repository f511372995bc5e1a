#include "s2tl/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "s2tl/errors.hpp"
#include "s2tl/ops.hpp"

namespace s2tl {

std::string to_string(Task task) { return task == Task::asr ? "asr" : "st"; }

Task parse_task(const std::string& text) {
  if (text == "asr") return Task::asr;
  if (text == "st") return Task::st;
  throw ConfigError("unknown task '" + text + "' (expected asr or st)");
}

TrainConfig TrainConfig::paper(Task task) {
  TrainConfig cfg;
  cfg.peak_lr = task == Task::asr ? 1e-3 : 2e-3;
  return cfg;
}

TrainConfig TrainConfig::desk(Task task) {
  TrainConfig cfg = paper(task);
  cfg.warmup_updates = 400;
  cfg.max_updates = 4000;
  cfg.max_tokens_per_batch = 2000;
  cfg.update_freq = 1;
  cfg.validate_every = 200;
  return cfg;
}

void TrainConfig::validate() const {
  if (!(peak_lr > 0.0)) throw ConfigError("train config: peak_lr must be positive");
  if (warmup_updates < 1) throw ConfigError("train config: warmup_updates must be >= 1");
  if (!(clip_norm > 0.0)) throw ConfigError("train config: clip_norm must be positive");
  if (label_smoothing < 0.0f || label_smoothing >= 1.0f)
    throw ConfigError("train config: label_smoothing must be in [0,1)");
  if (max_tokens_per_batch < 1) throw ConfigError("train config: max_tokens_per_batch must be >= 1");
  if (update_freq < 1) throw ConfigError("train config: update_freq must be >= 1");
  if (max_updates < 0) throw ConfigError("train config: max_updates must be >= 0");
  if (validate_every < 1) throw ConfigError("train config: validate_every must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ConfigError("train config: Adam betas must be in [0,1)");
}

namespace {

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double to_double(const std::string& k, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("train config: '" + k + "' expects a number, got '" + v + "'");
  }
}

long long to_int(const std::string& k, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long d = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("train config: '" + k + "' expects an integer, got '" + v + "'");
  }
}

}  // namespace

std::map<std::string, std::string> TrainConfig::to_map() const {
  return {{"peak_lr", num(peak_lr)},
          {"warmup_updates", std::to_string(warmup_updates)},
          {"clip_norm", num(clip_norm)},
          {"label_smoothing", num(label_smoothing)},
          {"max_tokens_per_batch", std::to_string(max_tokens_per_batch)},
          {"update_freq", std::to_string(update_freq)},
          {"max_updates", std::to_string(max_updates)},
          {"seed", std::to_string(seed)},
          {"adam_beta1", num(adam_beta1)},
          {"adam_beta2", num(adam_beta2)},
          {"adam_eps", num(adam_eps)},
          {"validate_every", std::to_string(validate_every)}};
}

TrainConfig TrainConfig::from_map(const std::map<std::string, std::string>& kv, TrainConfig cfg) {
  for (const auto& [k, v] : kv) {
    if (k == "peak_lr") cfg.peak_lr = to_double(k, v);
    else if (k == "warmup_updates") cfg.warmup_updates = static_cast<int>(to_int(k, v));
    else if (k == "clip_norm") cfg.clip_norm = to_double(k, v);
    else if (k == "label_smoothing") cfg.label_smoothing = static_cast<float>(to_double(k, v));
    else if (k == "max_tokens_per_batch") cfg.max_tokens_per_batch = static_cast<int>(to_int(k, v));
    else if (k == "update_freq") cfg.update_freq = static_cast<int>(to_int(k, v));
    else if (k == "max_updates") cfg.max_updates = static_cast<int>(to_int(k, v));
    else if (k == "seed") cfg.seed = static_cast<std::uint64_t>(to_int(k, v));
    else if (k == "adam_beta1") cfg.adam_beta1 = to_double(k, v);
    else if (k == "adam_beta2") cfg.adam_beta2 = to_double(k, v);
    else if (k == "adam_eps") cfg.adam_eps = to_double(k, v);
    else if (k == "validate_every") cfg.validate_every = static_cast<int>(to_int(k, v));
    else throw ConfigError("train config: unknown key '" + k + "'");
  }
  cfg.validate();
  return cfg;
}

Tensor label_smoothed_ce(const Tensor& logits, std::span<const int> targets, float smoothing) {
  return cross_entropy_logits(logits, targets, smoothing, kPad, Reduction::mean);
}

double inv_sqrt_lr(long step, double peak, long warmup) {
  if (step < 1) throw ContractError("inv_sqrt_lr: step must be >= 1");
  if (warmup < 1) throw ContractError("inv_sqrt_lr: warm-up must be >= 1");
  if (step <= warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  return peak * std::sqrt(static_cast<double>(warmup) / static_cast<double>(step));
}

double clip_grad_norm(std::span<const Tensor> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (float g : p.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm; update skipped");
  if (norm > max_norm) {
    const float factor = static_cast<float>(max_norm / norm);
    for (auto p : params) {
      if (!p.has_grad()) continue;
      for (auto& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

Adam::Adam(std::vector<Tensor> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0f);
    v_.emplace_back(p.numel(), 0.0f);
  }
}

void Adam::step(double lr) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor p = params_[i];
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k];
      const double mk = beta1_ * m[k] + (1.0 - beta1_) * gk;
      const double vk = beta2_ * v[k] + (1.0 - beta2_) * gk * gk;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      const double update = lr * (mk / bc1) / (std::sqrt(vk / bc2) + eps_);
      w[k] = static_cast<float>(w[k] - update);
    }
  }
}

void Adam::restore(long steps, std::vector<Buffer> m, std::vector<Buffer> v) {
  if (m.size() != params_.size() || v.size() != params_.size())
    throw DataError("optimizer state does not match the parameter list");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (m[i].size() != params_[i].numel() || v[i].size() != params_[i].numel())
      throw DataError("optimizer moment size mismatch for parameter " + std::to_string(i));
  }
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

std::vector<Example> make_examples(std::span<const FeatureUtterance> utts, const Vocabulary& vocab,
                                   const CmvnStats& cmvn, Task task) {
  std::vector<Example> out;
  out.reserve(utts.size());
  for (const auto& u : utts) {
    out.push_back({u.id, cmvn.apply(u.spec.frames),
                   vocab.encode(task == Task::asr ? u.transcript : u.translation)});
  }
  return out;
}

std::vector<Batch> pack_batches(std::span<const Example> examples,
                                std::span<const std::size_t> order, std::size_t max_tokens) {
  std::vector<Batch> batches;
  Batch current;
  for (auto idx : order) {
    const std::size_t cost = examples[idx].budget();
    if (!current.indices.empty() && current.budget + cost > max_tokens) {
      batches.push_back(std::move(current));
      current = {};
    }
    current.indices.push_back(idx);
    current.budget += cost;
  }
  if (!current.indices.empty()) batches.push_back(std::move(current));
  return batches;
}

std::vector<Batch> epoch_batches(std::span<const Example> examples, std::size_t max_tokens,
                                 std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + epoch);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return pack_batches(examples, order, max_tokens);
}

Trainer::Trainer(Model& model, TrainConfig cfg, std::vector<Example> train,
                 std::vector<Example> valid)
    : model_(model),
      cfg_(cfg),
      train_(std::move(train)),
      valid_(std::move(valid)),
      params_([&] {
        std::vector<Tensor> ps;
        for (const auto& p : model.parameters()) ps.push_back(p.tensor);
        return ps;
      }()),
      optimizer_(params_, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps) {
  cfg_.validate();
  if (train_.empty()) throw DataError("training set is empty");
}

UpdateRecord Trainer::update(std::span<const Batch> micro_batches) {
  const auto start = std::chrono::steady_clock::now();
  Tape::active().clear();
  for (auto p : params_) p.zero_grad();
  model_.set_training(true);

  std::size_t total_tokens = 0;
  for (const auto& b : micro_batches)
    for (auto idx : b.indices) total_tokens += train_.at(idx).tokens.size() - 1;
  if (total_tokens == 0) throw ContractError("update over an empty set of micro-batches");
  const float inv_tokens = 1.0f / static_cast<float>(total_tokens);

  double loss_sum = 0.0;
  for (const auto& b : micro_batches) {
    for (auto idx : b.indices) {
      const Example& ex = train_[idx];
      const auto input = ex.tokens.input();
      const auto target = ex.tokens.target();
      EncoderOutput enc = model_.encode(ex.frames);
      Tensor logits = model_.decode(input, enc);
      Tensor utt_loss = cross_entropy_logits(logits, target, cfg_.label_smoothing, kPad,
                                             Reduction::sum);
      loss_sum += utt_loss.item();
      backward(scale(utt_loss, inv_tokens));
    }
  }

  UpdateRecord rec;
  rec.step = optimizer_.steps() + 1;
  rec.lr = inv_sqrt_lr(rec.step, cfg_.peak_lr, cfg_.warmup_updates);
  rec.loss = loss_sum / static_cast<double>(total_tokens);
  rec.target_tokens = total_tokens;
  if (!std::isfinite(rec.loss)) throw NumericError("non-finite training loss at step " +
                                                   std::to_string(rec.step));
  rec.grad_norm = clip_grad_norm(params_, cfg_.clip_norm);
  optimizer_.step(rec.lr);
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                    .count();
  return rec;
}

std::vector<Batch> Trainer::next_batches() {
  std::vector<Batch> out;
  while (out.size() < static_cast<std::size_t>(cfg_.update_freq)) {
    if (epoch_plan_.empty()) {
      epoch_plan_ = epoch_batches(train_, cfg_.max_tokens_per_batch, cfg_.seed, epoch_);
    }
    out.push_back(epoch_plan_[cursor_++]);
    if (cursor_ == epoch_plan_.size()) {
      ++epoch_;
      cursor_ = 0;
      epoch_plan_.clear();
    }
  }
  return out;
}

UpdateRecord Trainer::train_step() {
  const auto batches = next_batches();
  return update(batches);
}

double Trainer::validate() {
  const auto& set = valid_.empty() ? train_ : valid_;
  NoGradGuard no_grad;
  const bool was_training = model_.training();
  model_.set_training(false);
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& ex : set) {
    EncoderOutput enc = model_.encode(ex.frames);
    Tensor logits = model_.decode(ex.tokens.input(), enc);
    const auto target = ex.tokens.target();
    nll += cross_entropy_logits(logits, target, 0.0f, kPad, Reduction::sum).item();
    tokens += target.size();
  }
  model_.set_training(was_training);
  return nll / static_cast<double>(tokens);
}

namespace {

void write_checkpoint(const std::filesystem::path& path, Checkpoint ck, const Checkpoint& extras) {
  for (const auto& [k, v] : extras.sections) ck.sections[k] = v;
  for (const auto& t : extras.tensors) ck.tensors.push_back(t);
  save_checkpoint(path, ck);
}

}  // namespace

std::vector<UpdateRecord> Trainer::run(const TrainOutputs& out) {
  std::vector<UpdateRecord> records;
  if (!out.dir.empty()) std::filesystem::create_directories(out.dir);
  while (step() < cfg_.max_updates) {
    UpdateRecord rec = train_step();
    records.push_back(rec);
    if (out.log) {
      nlohmann::json line = {{"step", rec.step},         {"lr", rec.lr},
                             {"loss", rec.loss},         {"grad_norm", rec.grad_norm},
                             {"wall_ms", rec.wall_ms},   {"tokens", rec.target_tokens}};
      const bool validating = rec.step % cfg_.validate_every == 0 || rec.step == cfg_.max_updates;
      if (validating) {
        const double v = validate();
        line["valid_nll"] = v;
        if (!has_best_ || v < best_) {
          best_ = v;
          has_best_ = true;
          if (!out.dir.empty())
            write_checkpoint(out.dir / "checkpoint_best.bin", checkpoint(), out.extras);
        }
      }
      *out.log << line.dump() << '\n' << std::flush;
    } else if (rec.step % cfg_.validate_every == 0 || rec.step == cfg_.max_updates) {
      const double v = validate();
      if (!has_best_ || v < best_) {
        best_ = v;
        has_best_ = true;
        if (!out.dir.empty())
          write_checkpoint(out.dir / "checkpoint_best.bin", checkpoint(), out.extras);
      }
    }
  }
  if (!out.dir.empty()) write_checkpoint(out.dir / "checkpoint_last.bin", checkpoint(), out.extras);
  return records;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck = capture_model(model_);
  std::ostringstream st;
  st << "step=" << optimizer_.steps() << '\n'
     << "epoch=" << epoch_ << '\n'
     << "cursor=" << cursor_ << '\n'
     << "has_best=" << (has_best_ ? 1 : 0) << '\n'
     << "best=" << num(best_) << '\n'
     << "rng=" << model_.rng().state() << '\n';
  ck.sections["train_state"] = st.str();
  std::string tc;
  for (const auto& [k, v] : cfg_.to_map()) tc += k + "=" + v + "\n";
  ck.sections["train_config"] = tc;
  const auto& ps = model_.parameters();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& m = optimizer_.first_moments()[i];
    const auto& v = optimizer_.second_moments()[i];
    ck.tensors.push_back({"optim.m." + ps[i].name, ps[i].tensor.shape(), {m.begin(), m.end()}});
    ck.tensors.push_back({"optim.v." + ps[i].name, ps[i].tensor.shape(), {v.begin(), v.end()}});
  }
  return ck;
}

void Trainer::restore(const Checkpoint& ck) {
  load_parameters(model_, ck);
  const auto it = ck.sections.find("train_state");
  if (it == ck.sections.end()) throw DataError("checkpoint has no train_state section");
  std::map<std::string, std::string> kv;
  std::istringstream is(it->second);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& k) {
    const auto f = kv.find(k);
    if (f == kv.end()) throw DataError("train_state lacks '" + k + "'");
    return f->second;
  };
  const long steps = std::stol(get("step"));
  epoch_ = std::stoull(get("epoch"));
  cursor_ = std::stoull(get("cursor"));
  has_best_ = get("has_best") == "1";
  best_ = std::stod(get("best"));
  model_.rng().set_state(get("rng"));
  epoch_plan_.clear();
  if (cursor_ > 0) epoch_plan_ = epoch_batches(train_, cfg_.max_tokens_per_batch, cfg_.seed, epoch_);

  std::vector<Buffer> m, v;
  for (const auto& p : model_.parameters()) {
    const auto* tm = ck.find("optim.m." + p.name);
    const auto* tv = ck.find("optim.v." + p.name);
    if (!tm || !tv) throw DataError("checkpoint lacks optimizer moments for " + p.name);
    m.emplace_back(tm->data.begin(), tm->data.end());
    v.emplace_back(tv->data.begin(), tv->data.end());
  }
  optimizer_.restore(steps, std::move(m), std::move(v));
}

std::vector<std::string> transfer_encoder(Model& model, const Checkpoint& asr) {
  const auto it = asr.sections.find("model_config");
  if (it == asr.sections.end()) throw DataError("ASR checkpoint has no model_config section");
  const ModelConfig src = ModelConfig::from_text(it->second);
  const ModelConfig& dst = model.config();
  std::vector<std::string> diffs;
  auto cmp = [&](const char* name, auto a, auto b) {
    if (a != b) {
      std::ostringstream os;
      os << name << ": checkpoint " << a << " vs model " << b;
      diffs.push_back(os.str());
    }
  };
  cmp("encoder_layers", src.encoder_layers, dst.encoder_layers);
  cmp("heads", src.heads, dst.heads);
  cmp("embed_dim", src.embed_dim, dst.embed_dim);
  cmp("ffn_dim", src.ffn_dim, dst.ffn_dim);
  cmp("mel_bins", src.mel_bins, dst.mel_bins);
  cmp("encoder_pattern", to_string(src.encoder_pattern), to_string(dst.encoder_pattern));
  cmp("window_size", src.window.window_size, dst.window.window_size);
  cmp("dilation", src.window.dilation, dst.window.dilation);
  cmp("post_encoder_conv", src.post_encoder_conv, dst.post_encoder_conv);
  cmp("encoder_pre_norm", src.encoder_pre_norm, dst.encoder_pre_norm);
  if (!diffs.empty()) {
    std::string msg = "encoder configuration differs from the ASR checkpoint:";
    for (const auto& d : diffs) msg += "\n  " + d;
    throw ConfigError(msg);
  }
  return load_parameters(model, asr, "encoder.");
}

}  // namespace s2tl
