#include "s2tl/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "s2tl/benchmark.hpp"
#include "s2tl/config.hpp"
#include "s2tl/corpus.hpp"
#include "s2tl/errors.hpp"
#include "s2tl/evaluation.hpp"
#include "s2tl/run_manifest.hpp"
#include "s2tl/training.hpp"

namespace s2tl {

namespace fs = std::filesystem;

std::string output_root() {
  const char* env = std::getenv("S2TL_OUTPUT_ROOT");
  return env && *env ? env : "runs";
}

namespace {

std::string cmvn_to_text(const CmvnStats& s) {
  std::ostringstream os;
  os << std::setprecision(9);
  for (std::size_t i = 0; i < s.mean.size(); ++i) os << s.mean[i] << ' ' << s.stddev[i] << '\n';
  return os.str();
}

CmvnStats cmvn_from_text(const std::string& text) {
  CmvnStats s;
  std::istringstream is(text);
  float m = 0, d = 0;
  while (is >> m >> d) {
    s.mean.push_back(m);
    s.stddev.push_back(d);
  }
  return s;
}

const std::string& section(const Checkpoint& ck, const std::string& name) {
  const auto it = ck.sections.find(name);
  if (it == ck.sections.end()) throw DataError("checkpoint lacks a '" + name + "' section");
  return it->second;
}

fs::path prepare_dir(const std::string& given, const std::string& command) {
  const fs::path dir = given.empty() ? fs::path(output_root()) / command : fs::path(given);
  fs::create_directories(dir);
  return dir;
}

void hash_manifest(RunManifest& rm, const fs::path& path, bool with_audio) {
  rm.add_input(path.filename().string(), path);
  if (!with_audio) return;
  const Manifest m = read_manifest(path);
  for (const auto& row : m.rows) {
    const fs::path audio = m.audio_file(row);
    if (fs::exists(audio)) rm.add_input(row.audio_path, audio);
  }
}

std::vector<EvalInput> eval_inputs(const std::vector<FeatureUtterance>& utts, const CmvnStats& cmvn,
                                   Task task) {
  std::vector<EvalInput> out;
  for (const auto& u : utts)
    out.push_back({u.id, cmvn.apply(u.spec.frames), task == Task::asr ? u.transcript : u.translation});
  return out;
}

template <class T>
std::string join_list(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

// ---- prepare ---------------------------------------------------------------

struct PrepareArgs {
  bool synthetic = false;
  std::string manifest;
  std::string out;
  SyntheticOptions syn;
};

void add_prepare(CLI::App& app, PrepareArgs& a) {
  auto* sub = app.add_subcommand("prepare", "Generate the synthetic corpus or validate a manifest");
  auto* syn = sub->add_flag("--synthetic", a.synthetic, "Generate the synthetic tone corpus");
  auto* man = sub->add_option("--manifest", a.manifest, "Validate an existing manifest")->check(CLI::ExistingFile);
  syn->excludes(man);
  sub->add_option("--out", a.out, "Output directory");
  sub->add_option("--utts", a.syn.train_utts, "Training utterances")->capture_default_str();
  sub->add_option("--dev-utts", a.syn.dev_utts, "Dev utterances")->capture_default_str();
  sub->add_option("--test-utts", a.syn.test_utts, "Test utterances")->capture_default_str();
  sub->add_option("--seed", a.syn.seed, "Corpus seed")->capture_default_str();
  sub->add_option("--alphabet", a.syn.alphabet, "Symbols, at most 26")->capture_default_str();
}

int cmd_prepare(const PrepareArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  if (!a.synthetic && a.manifest.empty())
    throw ConfigError("prepare: pass --synthetic or --manifest");
  RunManifest rm;
  rm.command = "prepare";
  rm.args = args;
  fs::path dir;
  std::vector<fs::path> manifests;
  if (a.synthetic) {
    dir = prepare_dir(a.out, "corpus");
    rm.seed = a.syn.seed;
    make_synthetic_corpus(dir, a.syn);
    for (const char* split : {"train.tsv", "dev.tsv", "test.tsv"}) manifests.push_back(dir / split);
    rm.outputs = {"train.tsv", "dev.tsv", "test.tsv", "wav/", "vocab.txt"};
  } else {
    manifests.push_back(a.manifest);
    dir = a.out.empty() ? fs::path(a.manifest).parent_path() : prepare_dir(a.out, "prepare");
    if (dir.empty()) dir = ".";
    rm.outputs = {"vocab.txt"};
  }
  std::vector<std::string> texts;
  for (const auto& path : manifests) {
    const Manifest m = read_manifest(path);
    validate_manifest(m);
    out << path.string() << ": " << m.rows.size() << " rows ok\n";
    if (path == manifests.front())
      for (const auto& row : m.rows) {
        texts.push_back(row.transcript);
        texts.push_back(row.translation);
      }
    hash_manifest(rm, path, true);
  }
  Vocabulary::build(texts).save(dir / "vocab.txt");
  rm.save(dir);
  out << "wrote " << (dir / "vocab.txt").string() << "\n";
  return kExitOk;
}

// ---- train -----------------------------------------------------------------

struct ModelFlags {
  std::string preset = "desk";
  std::string config;
  std::optional<int> window, dilation, enc_layers, dec_layers, dim, heads, ffn;
  std::optional<float> dropout;
  std::string pattern;
  bool post_conv = false;
  bool pre_norm_encoder = false;
  std::optional<int> max_updates, warmup, validate_every, max_tokens, update_freq;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::uint64_t model_seed = 1;
};

void add_model_flags(CLI::App* sub, ModelFlags& f) {
  sub->add_option("--preset", f.preset, "paper or desk")->check(CLI::IsMember({"paper", "desk"}))->capture_default_str();
  sub->add_option("--config", f.config, "INI file with [model] and [train] sections")->check(CLI::ExistingFile);
  sub->add_option("--window", f.window, "Encoder window size w (even)");
  sub->add_option("--dilation", f.dilation, "Window dilation d");
  sub->add_option("--pattern", f.pattern, "Encoder attention: sliding, dilated or dense");
  sub->add_flag("--post-conv", f.post_conv, "Halve the encoder output with a strided convolution");
  sub->add_flag("--pre-norm-encoder", f.pre_norm_encoder, "Pre-norm encoder blocks");
  sub->add_option("--enc-layers", f.enc_layers, "Encoder layers");
  sub->add_option("--dec-layers", f.dec_layers, "Decoder layers");
  sub->add_option("--dim", f.dim, "Embedding dimension");
  sub->add_option("--heads", f.heads, "Attention heads");
  sub->add_option("--ffn", f.ffn, "Feed-forward dimension");
  sub->add_option("--dropout", f.dropout, "Dropout probability");
  sub->add_option("--max-updates", f.max_updates, "Optimizer updates");
  sub->add_option("--warmup", f.warmup, "Warm-up updates");
  sub->add_option("--lr", f.lr, "Peak learning rate");
  sub->add_option("--max-tokens", f.max_tokens, "Batch budget in frames plus target tokens");
  sub->add_option("--update-freq", f.update_freq, "Micro-batches per update");
  sub->add_option("--validate-every", f.validate_every, "Updates between validations");
  sub->add_option("--seed", f.seed, "Data-order seed");
  sub->add_option("--model-seed", f.model_seed, "Parameter initialization seed")->capture_default_str();
}

ModelConfig desk_model() {
  ModelConfig m;
  m.encoder_layers = 2;
  m.decoder_layers = 2;
  m.embed_dim = 64;
  m.heads = 4;
  m.ffn_dim = 256;
  m.window = {8, 1};
  return m;
}

RunConfig resolve(const ModelFlags& f, Task task, const ModelConfig* base_model = nullptr) {
  RunConfig rc;
  rc.model = base_model ? *base_model : (f.preset == "desk" ? desk_model() : ModelConfig{});
  rc.train = f.preset == "desk" ? TrainConfig::desk(task) : TrainConfig::paper(task);
  if (!f.config.empty()) rc = RunConfig::load(f.config, rc);
  ModelConfig& m = rc.model;
  if (f.window) m.window.window_size = *f.window;
  if (f.dilation) m.window.dilation = *f.dilation;
  if (!f.pattern.empty()) m.encoder_pattern = parse_pattern_kind(f.pattern);
  else if (m.window.dilation > 1 && m.encoder_pattern == PatternKind::sliding) m.encoder_pattern = PatternKind::dilated;
  if (f.post_conv) m.post_encoder_conv = true;
  if (f.pre_norm_encoder) m.encoder_pre_norm = true;
  if (f.enc_layers) m.encoder_layers = *f.enc_layers;
  if (f.dec_layers) m.decoder_layers = *f.dec_layers;
  if (f.dim) m.embed_dim = *f.dim;
  if (f.heads) m.heads = *f.heads;
  if (f.ffn) m.ffn_dim = *f.ffn;
  if (f.dropout) m.dropout = *f.dropout;
  TrainConfig& t = rc.train;
  if (f.max_updates) t.max_updates = *f.max_updates;
  if (f.warmup) t.warmup_updates = *f.warmup;
  if (f.lr) t.peak_lr = *f.lr;
  if (f.max_tokens) t.max_tokens_per_batch = *f.max_tokens;
  if (f.update_freq) t.update_freq = *f.update_freq;
  if (f.validate_every) t.validate_every = *f.validate_every;
  if (f.seed) t.seed = *f.seed;
  m.validate(true);
  t.validate();
  return rc;
}

struct Corpus {
  Vocabulary vocab;
  CmvnStats cmvn;
  std::vector<FeatureUtterance> train, dev;
};

Corpus load_corpus(const fs::path& dir, RunManifest& rm) {
  Corpus c;
  const fs::path vocab = dir / "vocab.txt";
  c.vocab = Vocabulary::load(vocab);
  rm.add_input("vocab.txt", vocab);
  hash_manifest(rm, dir / "train.tsv", true);
  hash_manifest(rm, dir / "dev.tsv", true);
  c.train = load_features(read_manifest(dir / "train.tsv"));
  c.dev = load_features(read_manifest(dir / "dev.tsv"));
  std::vector<MelSpectrogram> specs;
  for (const auto& u : c.train) specs.push_back(u.spec);
  c.cmvn = CmvnStats::compute(specs);
  return c;
}

struct TrainArgs {
  std::string task;
  std::string data;
  std::string out;
  std::string init_encoder;
  std::string resume;
  ModelFlags flags;
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* sub = app.add_subcommand("train", "Train an ASR model, or an ST model from an ASR encoder");
  sub->add_option("task", a.task, "asr or st")->required()->check(CLI::IsMember({"asr", "st"}));
  sub->add_option("--data", a.data, "Corpus directory (train.tsv, dev.tsv, vocab.txt)")->required()->check(CLI::ExistingDirectory);
  sub->add_option("--out", a.out, "Output directory");
  sub->add_option("--init-encoder", a.init_encoder, "ASR checkpoint whose encoder initializes the model")->check(CLI::ExistingFile);
  sub->add_option("--resume", a.resume, "Continue from a checkpoint of this run")->check(CLI::ExistingFile);
  add_model_flags(sub, a.flags);
}

int cmd_train(const TrainArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  const Task task = parse_task(a.task);
  std::optional<Checkpoint> asr;
  std::optional<ModelConfig> asr_model;
  if (!a.init_encoder.empty()) {
    if (task != Task::st) throw ConfigError("--init-encoder applies to st training only");
    asr = load_checkpoint(a.init_encoder);
    asr_model = ModelConfig::from_text(section(*asr, "model_config"));
  }
  RunConfig rc = resolve(a.flags, task, asr_model ? &*asr_model : nullptr);

  RunManifest rm;
  rm.command = "train";
  rm.args = args;
  rm.seed = rc.train.seed;
  if (!a.flags.config.empty()) rm.add_input("config:" + fs::path(a.flags.config).filename().string(), a.flags.config);
  if (asr) rm.add_input("init_encoder:" + fs::path(a.init_encoder).filename().string(), a.init_encoder);
  const Corpus corpus = load_corpus(a.data, rm);
  rc.model.vocab_size = static_cast<int>(corpus.vocab.size());
  rc.model.validate();

  const fs::path dir = prepare_dir(a.out, "train-" + a.task);
  Model model(rc.model, a.flags.model_seed);
  if (asr) {
    const auto names = transfer_encoder(model, *asr);
    out << "initialized " << names.size() << " encoder tensors from " << a.init_encoder << "\n";
  }
  Trainer trainer(model, rc.train, make_examples(corpus.train, corpus.vocab, corpus.cmvn, task),
                  make_examples(corpus.dev, corpus.vocab, corpus.cmvn, task));
  if (!a.resume.empty()) {
    rm.add_input("resume:" + fs::path(a.resume).filename().string(), a.resume);
    trainer.restore(load_checkpoint(a.resume));
    out << "resumed at step " << trainer.step() << "\n";
  }
  rc.save(dir / "resolved_config.ini");
  rm.resolved_config = rc.serialize();
  rm.outputs = {"resolved_config.ini", "train_log.jsonl", "checkpoint_best.bin", "checkpoint_last.bin"};
  rm.save(dir);

  std::ofstream log(dir / "train_log.jsonl", a.resume.empty() ? std::ios::trunc : std::ios::app);
  TrainOutputs outputs{dir, {}, &log};
  outputs.extras.sections["vocab"] = corpus.vocab.serialize();
  outputs.extras.sections["cmvn"] = cmvn_to_text(corpus.cmvn);
  outputs.extras.sections["task"] = a.task;
  const auto records = trainer.run(outputs);
  if (!records.empty()) {
    const auto& last = records.back();
    out << "step " << last.step << " loss " << last.loss << " lr " << last.lr << "\n";
  }
  out << "best valid nll " << trainer.best_metric() << "\n"
      << "wrote " << (dir / "checkpoint_last.bin").string() << "\n";
  return kExitOk;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, manifest, metric, ref, out;
  std::size_t beam = 1;
  std::size_t max_len = 100;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  auto* sub = app.add_subcommand("eval", "Decode a manifest and score it");
  sub->add_option("--checkpoint", a.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  sub->add_option("--manifest", a.manifest, "Manifest to decode")->required()->check(CLI::ExistingFile);
  sub->add_option("--metric", a.metric, "wer, bleu or acc (default: wer for asr, bleu for st)");
  sub->add_option("--ref", a.ref, "Reference column: transcript or translation")->check(CLI::IsMember({"transcript", "translation"}));
  sub->add_option("--beam", a.beam, "Beam size, 1 decodes greedily")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--max-len", a.max_len, "Maximum output tokens")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--out", a.out, "Output directory");
}

int cmd_eval(const EvalArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Task task = parse_task(section(ck, "task"));
  const Metric metric = a.metric.empty() ? (task == Task::asr ? Metric::wer : Metric::bleu) : parse_metric(a.metric);
  const Task ref = a.ref.empty() ? task : (a.ref == "transcript" ? Task::asr : Task::st);
  Model model = restore_model(ck);
  const Vocabulary vocab = Vocabulary::parse(section(ck, "vocab"));
  const CmvnStats cmvn = cmvn_from_text(section(ck, "cmvn"));

  RunManifest rm;
  rm.command = "eval";
  rm.args = args;
  rm.add_input("checkpoint:" + fs::path(a.checkpoint).filename().string(), a.checkpoint);
  hash_manifest(rm, a.manifest, true);
  const auto inputs = eval_inputs(load_features(read_manifest(a.manifest)), cmvn, ref);
  const EvalReport report = evaluate(model, vocab, inputs, metric, a.beam, a.max_len);

  const fs::path dir = prepare_dir(a.out, "eval");
  std::ofstream tsv(dir / "report.tsv");
  report.write_tsv(tsv);
  rm.outputs = {"report.tsv"};
  rm.save(dir);
  out << "corpus " << to_string(metric) << "=" << report.corpus << " utterances=" << report.rows.size()
      << "\nwrote " << (dir / "report.tsv").string() << "\n";
  return kExitOk;
}

// ---- bench -----------------------------------------------------------------

struct BenchArgs {
  std::vector<std::string> patterns{"dense", "sliding"};
  ScalingOptions opts;
  bool forward_only = false;
  std::string out;
};

void add_bench(CLI::App& app, BenchArgs& a) {
  auto* sub = app.add_subcommand("bench", "Time dense and windowed attention over a length ladder");
  sub->add_option("--patterns", a.patterns, "dense, sliding, dilated")->delimiter(',')->capture_default_str();
  sub->add_option("--ladder", a.opts.ladder, "Sequence lengths")->delimiter(',')->capture_default_str();
  sub->add_option("--window", a.opts.window, "Window size")->capture_default_str();
  sub->add_option("--dilation", a.opts.dilation, "Dilation for the dilated pattern")->capture_default_str();
  sub->add_option("--repeats", a.opts.repeats, "Timed repeats per point")->capture_default_str();
  sub->add_option("--heads", a.opts.heads, "Heads")->capture_default_str();
  sub->add_option("--head-dim", a.opts.head_dim, "Per-head dimension")->capture_default_str();
  sub->add_option("--seed", a.opts.seed, "Input seed")->capture_default_str();
  sub->add_flag("--forward-only", a.forward_only, "Skip the backward pass");
  sub->add_option("--out", a.out, "Output directory");
}

int cmd_bench(BenchArgs a, const std::vector<std::string>& args, std::ostream& out) {
  a.opts.patterns.clear();
  for (const auto& p : a.patterns) a.opts.patterns.push_back(parse_pattern_kind(p));
  a.opts.backward = !a.forward_only;
  WindowConfig{a.opts.window, a.opts.dilation}.validate();
  const ScalingReport report = run_scaling(a.opts);
  const fs::path dir = prepare_dir(a.out, "bench");
  std::ofstream csv(dir / "scaling.csv");
  report.write_csv(csv);
  std::ofstream summary(dir / "scaling_summary.txt");
  report.write_summary(summary);
  RunManifest rm;
  rm.command = "bench";
  rm.args = args;
  rm.seed = a.opts.seed;
  rm.outputs = {"scaling.csv", "scaling_summary.txt"};
  rm.save(dir);
  report.write_summary(out);
  out << "wrote " << (dir / "scaling.csv").string() << "\n";
  return kExitOk;
}

// ---- sweep -----------------------------------------------------------------

struct SweepArgs {
  std::string data, out;
  std::vector<int> sizes{512, 76, 60, 48};
  std::size_t max_len = 64;
  ModelFlags flags;
};

void add_sweep(CLI::App& app, SweepArgs& a) {
  auto* sub = app.add_subcommand("sweep", "Train one ASR model per encoder window size");
  sub->add_option("--data", a.data, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  sub->add_option("--sizes", a.sizes, "Window sizes")->delimiter(',')->capture_default_str();
  sub->add_option("--max-len", a.max_len, "Decoding limit")->capture_default_str();
  sub->add_option("--out", a.out, "Output directory");
  add_model_flags(sub, a.flags);
}

int cmd_sweep(const SweepArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  const RunConfig rc = resolve(a.flags, Task::asr);
  RunManifest rm;
  rm.command = "sweep";
  rm.args = args;
  rm.seed = rc.train.seed;
  rm.resolved_config = rc.serialize();
  const Corpus corpus = load_corpus(a.data, rm);
  SweepOptions o;
  o.sizes = a.sizes;
  o.model = rc.model;
  o.model.vocab_size = static_cast<int>(corpus.vocab.size());
  o.train = rc.train;
  o.model_seed = a.flags.model_seed;
  o.max_len = a.max_len;
  const auto train = make_examples(corpus.train, corpus.vocab, corpus.cmvn, Task::asr);
  const auto valid = make_examples(corpus.dev, corpus.vocab, corpus.cmvn, Task::asr);
  const auto rows = window_sweep(o, train, valid, eval_inputs(corpus.dev, corpus.cmvn, Task::asr), corpus.vocab);
  const fs::path dir = prepare_dir(a.out, "sweep");
  std::ofstream csv(dir / "sweep.csv");
  write_sweep_csv(csv, rows);
  rm.outputs = {"sweep.csv"};
  rm.save(dir);
  write_sweep_csv(out, rows);
  return kExitOk;
}

// ---- inspect ---------------------------------------------------------------

struct InspectArgs {
  std::string checkpoint, manifest, utt, module = "encoder", out;
  std::size_t layer = 0, head = 0;
};

void add_inspect(CLI::App& app, InspectArgs& a) {
  auto* sub = app.add_subcommand("inspect", "Dump attention weights of one layer and head as CSV");
  sub->add_option("--checkpoint", a.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  sub->add_option("--manifest", a.manifest, "Manifest holding the utterance")->required()->check(CLI::ExistingFile);
  sub->add_option("--utt", a.utt, "Utterance id (default: first row)");
  sub->add_option("--module", a.module, "encoder or decoder")->check(CLI::IsMember({"encoder", "decoder"}))->capture_default_str();
  sub->add_option("--layer", a.layer, "Layer index")->capture_default_str();
  sub->add_option("--head", a.head, "Head index")->capture_default_str();
  sub->add_option("--out", a.out, "Output directory");
}

int cmd_inspect(const InspectArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  Model model = restore_model(ck);
  const ModelConfig& cfg = model.config();
  const bool encoder = a.module == "encoder";
  const std::size_t layers = static_cast<std::size_t>(encoder ? cfg.encoder_layers : cfg.decoder_layers);
  if (a.layer >= layers)
    throw ConfigError("--layer " + std::to_string(a.layer) + " out of range (model has " + std::to_string(layers) + ")");
  if (a.head >= static_cast<std::size_t>(cfg.heads))
    throw ConfigError("--head " + std::to_string(a.head) + " out of range (model has " + std::to_string(cfg.heads) + ")");

  Manifest manifest = read_manifest(a.manifest);
  if (!a.utt.empty()) {
    std::erase_if(manifest.rows, [&](const ManifestRow& r) { return r.id != a.utt; });
    if (manifest.rows.empty()) throw DataError("utterance '" + a.utt + "' not in " + a.manifest);
  }
  manifest.rows.resize(1);
  const FeatureUtterance utt = load_features(manifest).front();
  const Tensor frames = cmvn_from_text(section(ck, "cmvn")).apply(utt.spec.frames);

  const fs::path dir = prepare_dir(a.out, "inspect");
  std::ofstream csv(dir / "attention.csv");
  csv << std::setprecision(7);
  bool ok = true;
  std::string shape;
  if (encoder && cfg.encoder_pattern != PatternKind::dense) {
    const BandedWeights bw = model.encoder_attention_weights(frames, a.layer);
    const int half = bw.half;
    csv << "query";
    for (std::size_t s = 0; s < bw.width; ++s) csv << ",offset_" << (static_cast<int>(s) - half) * bw.dilation;
    csv << "\n";
    for (std::size_t i = 0; i < bw.length; ++i) {
      csv << i;
      double row = 0;
      std::size_t entries = 0;
      for (std::size_t s = 0; s < bw.width; ++s) {
        csv << ',';
        if (bw.key_index(i, s) < 0) continue;
        const float w = bw.weights[(a.head * bw.length + i) * bw.width + s];
        csv << w;
        row += w;
        ++entries;
      }
      csv << "\n";
      ok = ok && entries <= static_cast<std::size_t>(cfg.window.window_size) + 1 && std::abs(row - 1.0) <= 1e-5;
    }
    shape = "band of width " + std::to_string(bw.width) + " over " + std::to_string(bw.length) + " queries";
  } else {
    Tensor w;
    if (encoder) {
      w = model.encoder_dense_attention_weights(frames, a.layer);
    } else {
      const Vocabulary vocab = Vocabulary::parse(section(ck, "vocab"));
      const Task task = parse_task(section(ck, "task"));
      const TokenSequence seq = vocab.encode(task == Task::asr ? utt.transcript : utt.translation);
      w = model.decoder_attention_weights(seq.input(), model.encode(frames), a.layer);
    }
    const std::size_t m = w.dim(1), n = w.dim(2);
    csv << "query";
    for (std::size_t j = 0; j < n; ++j) csv << ",key_" << j;
    csv << "\n";
    const auto d = w.data();
    for (std::size_t i = 0; i < m; ++i) {
      csv << i;
      double row = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const float v = d[(a.head * m + i) * n + j];
        csv << ',' << v;
        row += v;
        if (!encoder && j > i && v != 0.0f) ok = false;
      }
      csv << "\n";
      ok = ok && std::abs(row - 1.0) <= 1e-5;
    }
    shape = (encoder ? "dense " : "lower-triangular ") + std::to_string(m) + "x" + std::to_string(n);
  }
  RunManifest rm;
  rm.command = "inspect";
  rm.args = args;
  rm.add_input("checkpoint:" + fs::path(a.checkpoint).filename().string(), a.checkpoint);
  rm.outputs = {"attention.csv"};
  rm.save(dir);
  if (!ok) throw NumericError("attention dump failed its shape check (" + shape + ")");
  out << utt.id << ": " << shape << ", rows sum to 1\nwrote " << (dir / "attention.csv").string() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sliding-window speech-to-text toolkit", "s2tl"};
  app.require_subcommand(1);
  PrepareArgs prepare;
  TrainArgs train;
  EvalArgs eval;
  BenchArgs bench;
  SweepArgs sweep;
  InspectArgs inspect;
  std::string rerun_manifest, rerun_out;
  add_prepare(app, prepare);
  add_train(app, train);
  add_eval(app, eval);
  add_bench(app, bench);
  add_sweep(app, sweep);
  add_inspect(app, inspect);
  auto* rerun = app.add_subcommand("rerun", "Repeat the command recorded in a run manifest");
  rerun->add_option("manifest", rerun_manifest, "run_manifest.json")->required()->check(CLI::ExistingFile);
  rerun->add_option("--out", rerun_out, "Output directory for the repeat");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "prepare") return cmd_prepare(prepare, args, out);
    if (cmd == "train") return cmd_train(train, args, out);
    if (cmd == "eval") return cmd_eval(eval, args, out);
    if (cmd == "bench") return cmd_bench(bench, args, out);
    if (cmd == "sweep") return cmd_sweep(sweep, args, out);
    if (cmd == "inspect") return cmd_inspect(inspect, args, out);
    const RunManifest rm = RunManifest::load(rerun_manifest);
    std::vector<std::string> again;
    for (std::size_t i = 0; i < rm.args.size(); ++i) {
      if (!rerun_out.empty() && rm.args[i] == "--out" && i + 1 < rm.args.size()) {
        ++i;
        continue;
      }
      if (!rerun_out.empty() && rm.args[i].rfind("--out=", 0) == 0) continue;
      again.push_back(rm.args[i]);
    }
    if (!rerun_out.empty()) {
      again.push_back("--out");
      again.push_back(rerun_out);
    }
    return run_cli(again, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace s2tl
