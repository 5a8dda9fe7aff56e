#include "cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "piaa/error.hpp"
#include "piaa/parallel.hpp"
#include "piaa/reports.hpp"
#include "piaa/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace piaa::cli {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UndefinedAp : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flag values as typed; unset fields leave the config-file / default value alone.
struct Overrides {
  std::optional<std::size_t> bank_capacity;
  std::optional<double> alpha;
  std::optional<double> logit_scale;
  std::optional<double> temperature;
  std::optional<std::string> mode;
  std::optional<int> threads;
  std::optional<std::uint64_t> seed;
  bool transductive = false;
  bool no_secondary_softmax = false;
  bool stage1_no_shrinkage = false;
  bool self_consistent_covariance = false;
  bool allow_empty_classes = false;
  bool no_normalize = false;
  bool cls_through_gda = false;
};

struct Paths {
  std::string config;
  std::string dataset;
  std::string embeddings;
  std::string adapt;
  std::string prototypes;
  std::string classifier;
  std::string out;
  std::string out_dir;
};

void add_pipeline_options(CLI::App* sub, Overrides& o, Paths& p) {
  sub->add_option("--config", p.config, "JSON run config (flags take precedence)");
  sub->add_option("--dataset", p.dataset, "JSON dataset manifest with embeddings/adapt/prototypes paths");
  sub->add_option("--embeddings", p.embeddings, "evaluation (or inference) embedding file");
  sub->add_option("--adapt", p.adapt, "unlabeled adaptation split used to build the banks");
  sub->add_option("--prototypes", p.prototypes, "text prototype file");
  sub->add_option("--classifier", p.classifier, "fitted classifier (.piac); skips fitting");
  sub->add_option("--out-dir", p.out_dir, "directory for reports and the run manifest");
  sub->add_option("-K,--bank-capacity", o.bank_capacity, "memory bank capacity per class");
  sub->add_option("--alpha", o.alpha, "fusion weight of the patch branch");
  sub->add_option("--logit-scale", o.logit_scale, "text-alignment logit scale");
  sub->add_option("--temperature", o.temperature, "secondary softmax temperature");
  sub->add_option("--mode", o.mode, "full | patch_only | cls_only");
  sub->add_option("--threads", o.threads, "worker threads (default: PIAA_THREADS or all cores)");
  sub->add_option("--seed", o.seed, "seed recorded in the manifest");
  sub->add_flag("--transductive", o.transductive, "build banks from the evaluation images");
  sub->add_flag("--no-secondary-softmax", o.no_secondary_softmax, "rank raw max-pooled scores");
  sub->add_flag("--stage1-no-shrinkage", o.stage1_no_shrinkage, "invert the raw covariance in stage 1");
  sub->add_flag("--self-consistent-covariance", o.self_consistent_covariance,
                "divide the pooled scatter by |B| - 1");
  sub->add_flag("--allow-empty-classes", o.allow_empty_classes,
                "exit 0 even when some class has no positives");
  sub->add_flag("--no-normalize", o.no_normalize, "keep raw embedding magnitudes");
  sub->add_flag("--cls-through-gda", o.cls_through_gda, "score [CLS] with the visual classifier");
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

RunConfig effective_config(const Overrides& o, const Paths& p) {
  RunConfig c;
  if (!p.config.empty()) {
    try {
      c = apply_json(read_json(p.config), c);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }
  if (o.bank_capacity) c.bank_capacity = *o.bank_capacity;
  if (o.alpha) c.alpha = *o.alpha;
  if (o.logit_scale) c.logit_scale = *o.logit_scale;
  if (o.temperature) c.temperature = *o.temperature;
  if (o.mode) {
    try {
      c.mode = parse_mode(*o.mode);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }
  if (o.threads) c.threads = *o.threads;
  if (o.seed) c.seed = *o.seed;
  if (o.transductive) c.transductive = true;
  if (o.no_secondary_softmax) c.secondary_softmax = false;
  if (o.stage1_no_shrinkage) c.stage1_shrinkage = false;
  if (o.self_consistent_covariance) c.self_consistent_covariance = true;
  if (o.allow_empty_classes) c.allow_empty_classes = true;
  if (o.no_normalize) c.normalize = false;
  if (o.cls_through_gda) c.cls_through_gda = true;

  if (c.bank_capacity == 0) throw UsageError("K must be positive");
  if (!(c.alpha >= 0.0 && c.alpha <= 1.0)) throw UsageError("alpha must lie in [0, 1]");
  if (!(c.temperature > 0.0)) throw UsageError("temperature must be positive");
  if (!(c.logit_scale >= 0.0)) throw UsageError("logit scale must be non-negative");
  if (c.threads < 0) throw UsageError("threads must be non-negative");
  return c;
}

// Fills unset paths from a dataset manifest; relative entries resolve against its directory.
void apply_dataset(Paths& p) {
  if (p.dataset.empty()) return;
  const json d = read_json(p.dataset);
  const fs::path base = fs::path(p.dataset).parent_path();
  auto pick = [&](std::string& slot, std::initializer_list<const char*> keys) {
    if (!slot.empty()) return;
    for (const char* k : keys) {
      if (d.contains(k) && d[k].is_string()) {
        const fs::path v = d[k].get<std::string>();
        slot = (v.is_absolute() ? v : base / v).string();
        return;
      }
    }
  };
  pick(p.embeddings, {"eval", "embeddings"});
  pick(p.adapt, {"adapt"});
  pick(p.prototypes, {"prototypes"});
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string("missing required input ") + flag);
}

fs::path output_dir(const std::string& requested, const fs::path& fallback = ".") {
  const fs::path dir = requested.empty() ? fallback : fs::path(requested);
  fs::create_directories(dir.empty() ? fs::path(".") : dir);
  return dir.empty() ? fs::path(".") : dir;
}

struct Manifest {
  std::string subcommand;
  json inputs = json::object();
  json outputs = json::array();
  json extra = json::object();
  Timings timings;
};

void write_manifest(const fs::path& dir, const Manifest& m, const RunConfig* config) {
  json j;
  j["subcommand"] = m.subcommand;
  j["format_version"] = kFormatVersion;
  if (config) {
    j["config"] = to_json(*config);
    j["config_digest"] = config_digest(pipeline_config(*config));
  }
  j["threads"] = thread_count();
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["timings"] = {{"acquisition", m.timings.acquisition_s}, {"inference", m.timings.inference_s}};
  for (auto it = m.extra.begin(); it != m.extra.end(); ++it) j[it.key()] = it.value();
  write_text(dir / (m.subcommand + ".manifest.json"), j.dump(2) + "\n");
}

void apply_threads(const RunConfig& c) { set_thread_count(c.threads); }

// Everything a scoring subcommand needs, loaded once.
struct Loaded {
  EmbeddingSet eval;
  std::optional<EmbeddingSet> adapt;
  TextPrototypeSet prototypes;
};

Loaded load_inputs(const Paths& p, const RunConfig& c, bool need_adapt, Manifest& m) {
  require(p.embeddings, "--embeddings");
  require(p.prototypes, "--prototypes");
  Loaded l;
  const ReadOptions opts{c.normalize};
  l.eval = read_embedding_file(p.embeddings, opts);
  l.prototypes = read_text_prototypes(p.prototypes);
  m.inputs["embeddings"] = p.embeddings;
  m.inputs["prototypes"] = p.prototypes;
  if (l.eval.dim != l.prototypes.dim) throw Error("embeddings and prototypes differ in dimension");
  if (need_adapt) {
    if (c.transductive && !p.adapt.empty()) {
      throw UsageError("--transductive and --adapt are mutually exclusive");
    }
    if (!c.transductive) {
      if (p.adapt.empty()) {
        throw UsageError("no adaptation split: pass --adapt, --classifier or --transductive");
      }
      l.adapt = read_embedding_file(p.adapt, opts);
      m.inputs["adapt"] = p.adapt;
      if (l.adapt->dim != l.prototypes.dim) throw Error("adaptation split and prototypes differ in dimension");
    }
  }
  return l;
}

const EmbeddingSet& adapt_set(const Loaded& l) { return l.adapt ? *l.adapt : l.eval; }

PvclOptions pvcl_options(const RunConfig& c) { return pipeline_config(c).pvcl; }

json fit_metadata(const RunConfig& c, const PvclResult& r, const TextPrototypeSet& t,
                  std::size_t num_patches) {
  json j;
  j["config"] = json::parse(config_json(pipeline_config(c)));
  j["class_names"] = t.class_names;
  j["bootstrap_sizes"] = r.report.bootstrap_sizes;
  j["purified_sizes"] = r.report.purified_sizes;
  j["fallback_classes"] = r.report.fallback_classes;
  j["num_patches"] = num_patches;
  return j;
}

void check_classifier_matches(const GdaClassifier& k, const TextPrototypeSet& t) {
  if (k.dim() != t.dim || k.num_classes() != t.num_classes()) {
    throw Error("classifier does not match the prototypes (dimension or class count)");
  }
}

GdaClassifier obtain_classifier(const Paths& p, const RunConfig& c, const Loaded& l, Manifest& m) {
  if (!p.classifier.empty()) {
    auto stored = read_classifier(p.classifier);
    check_classifier_matches(stored.classifier, l.prototypes);
    m.inputs["classifier"] = p.classifier;
    return std::move(stored.classifier);
  }
  const auto t0 = Clock::now();
  const EmbeddingSet& source = adapt_set(l);
  PvclResult r = run_pvcl(PatchView(source), l.prototypes, pvcl_options(c));
  m.timings.acquisition_s += seconds_since(t0);
  m.extra["fallback_classes"] = r.report.fallback_classes;
  return std::move(r.classifier);
}

void check_undefined(const EvalResult& r, const RunConfig& c, const TextPrototypeSet& t) {
  if (r.undefined_classes.empty() || c.allow_empty_classes) return;
  std::string names;
  for (const auto k : r.undefined_classes) names += (names.empty() ? "" : ", ") + t.class_names[k];
  throw UndefinedAp("AP undefined (no positives) for: " + names + "; pass --allow-empty-classes to accept");
}

// ---- subcommands -----------------------------------------------------------

struct SynthArgs {
  std::string spec;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> adapt_images;
  std::optional<int> threads;
  std::string out_dir;
};

int cmd_synth(const SynthArgs& a) {
  if (a.out_dir.empty()) throw UsageError("missing required --out-dir");
  set_thread_count(a.threads.value_or(0));
  std::string text;
  if (!a.spec.empty()) {
    std::ifstream in(a.spec);
    if (!in) throw UsageError("cannot open synth spec '" + a.spec + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    text = buf.str();
  }
  for (const auto& s : a.sets) text += "\n" + s;
  if (a.seed) text += "\nseed = " + std::to_string(*a.seed);
  SynthConfig cfg;
  try {
    cfg = parse_synth_config(text);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const SynthSpec spec = make_spec(cfg);
  const fs::path dir = output_dir(a.out_dir);

  Manifest m;
  m.subcommand = "synth";
  const SynthData data = generate(spec);
  write_embedding_file(data.set, dir / "eval.piaa");
  write_text_prototypes(data.prototypes, dir / "prototypes.piaa");
  json gt_meta = {{"source", "synthetic ground truth"}, {"seed", spec.seed}};
  write_classifier(data.ground_truth, gt_meta.dump(), dir / "ground_truth.piac");
  m.outputs = {(dir / "eval.piaa").string(), (dir / "prototypes.piaa").string(),
               (dir / "ground_truth.piac").string()};

  json dataset = {{"eval", "eval.piaa"}, {"prototypes", "prototypes.piaa"},
                  {"class_names", data.prototypes.class_names}};
  const std::size_t adapt_images = a.adapt_images.value_or(spec.num_images);
  if (adapt_images > 0) {
    SynthSpec adapt_spec = spec;
    adapt_spec.num_images = adapt_images;
    adapt_spec.seed = mix64(spec.seed ^ 0xada97ull);
    SynthData adapt = generate(adapt_spec);
    adapt.set.labels.reset();  // the adaptation split is unlabeled by definition
    write_embedding_file(adapt.set, dir / "adapt.piaa");
    dataset["adapt"] = "adapt.piaa";
    m.outputs.push_back((dir / "adapt.piaa").string());
  }
  write_text(dir / "dataset.json", dataset.dump(2) + "\n");
  m.outputs.push_back((dir / "dataset.json").string());

  m.extra["synth"] = {{"classes", spec.num_classes}, {"dim", spec.dim},
                      {"images", spec.num_images}, {"patches_per_image", spec.patches_per_image},
                      {"adapt_images", adapt_images}, {"seed", spec.seed},
                      {"gap_angle_deg", spec.gap.angle_deg}, {"gap_offset", spec.gap.offset},
                      {"background_fraction", spec.background_fraction}};
  write_manifest(dir, m, nullptr);
  std::cout << "wrote synthetic dataset to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_fit(const Overrides& o, Paths p) {
  apply_dataset(p);
  const RunConfig c = effective_config(o, p);
  apply_threads(c);
  require(p.prototypes, "--prototypes");
  std::string source = p.embeddings;
  if (!p.adapt.empty() && !c.transductive) source = p.adapt;  // banks come from the adaptation split
  require(source, "--embeddings");
  if (p.out.empty()) p.out = (output_dir(p.out_dir) / "classifier.piac").string();
  const fs::path dir = output_dir(p.out_dir, fs::path(p.out).parent_path());

  Manifest m;
  m.subcommand = "fit";
  const EmbeddingSet set = read_embedding_file(source, ReadOptions{c.normalize});
  const TextPrototypeSet protos = read_text_prototypes(p.prototypes);
  m.inputs = {{"embeddings", source}, {"prototypes", p.prototypes}};
  const auto t0 = Clock::now();
  const PvclResult r = run_pvcl(PatchView(set), protos, pvcl_options(c));
  m.timings.acquisition_s = seconds_since(t0);
  write_classifier(r.classifier, fit_metadata(c, r, protos, set.num_patches()).dump(), p.out);
  m.outputs = {p.out};
  m.extra["fallback_classes"] = r.report.fallback_classes;
  write_manifest(dir, m, &c);
  std::printf("fitted %zu classes on %zu patches in %.3f s -> %s\n", protos.num_classes(),
              set.num_patches(), m.timings.acquisition_s, p.out.c_str());
  return kExitOk;
}

struct InferArgs {
  std::string format = "csv";
  bool dump_patches = false;
};

int cmd_infer(const Overrides& o, Paths p, const InferArgs& a) {
  apply_dataset(p);
  const RunConfig c = effective_config(o, p);
  apply_threads(c);
  if (a.format != "csv" && a.format != "jsonl") throw UsageError("--format must be csv or jsonl");
  Manifest m;
  m.subcommand = "infer";
  const bool needs_fit = c.mode != InferMode::cls_only && p.classifier.empty();
  const Loaded l = load_inputs(p, c, needs_fit, m);
  const fs::path dir = output_dir(p.out_dir);

  GdaClassifier k;
  const bool use_gda = c.mode != InferMode::cls_only || !p.classifier.empty();
  if (use_gda) k = obtain_classifier(p, c, l, m);
  const PatchScorer scorer = use_gda ? PatchScorer::gda(k) : PatchScorer::text(l.prototypes, c.logit_scale);

  const auto t0 = Clock::now();
  const BatchScores batch =
      infer_batch(scorer, PatchView(l.eval), l.prototypes, pipeline_config(c).infer, a.dump_patches);
  m.timings.inference_s = seconds_since(t0);

  const fs::path scores_path = dir / (a.format == "csv" ? "scores.csv" : "scores.jsonl");
  write_text(scores_path, a.format == "csv"
                              ? scores_csv(batch, l.eval.image_ids, l.prototypes.class_names)
                              : scores_jsonl(batch, l.eval.image_ids));
  m.outputs = {scores_path.string()};
  if (a.dump_patches) {
    write_text(dir / "patch_scores.csv",
               patch_dump_csv(batch, l.eval.image_ids, l.prototypes.class_names));
    m.outputs.push_back((dir / "patch_scores.csv").string());
  }
  m.extra["patches_scored"] = batch.patches_scored;
  write_manifest(dir, m, &c);
  std::printf("scored %zu images (%zu patches) -> %s\n", batch.images.size(), batch.patches_scored,
              scores_path.string().c_str());
  return kExitOk;
}

Experiment experiment_for(const Loaded& l) {
  return Experiment{&adapt_set(l), &l.eval, &l.prototypes};
}

int cmd_eval(const Overrides& o, Paths p) {
  apply_dataset(p);
  const RunConfig c = effective_config(o, p);
  apply_threads(c);
  Manifest m;
  m.subcommand = "eval";
  const bool needs_fit = c.mode != InferMode::cls_only && p.classifier.empty();
  const Loaded l = load_inputs(p, c, needs_fit, m);
  const fs::path dir = output_dir(p.out_dir);

  GdaClassifier k;
  const bool use_gda = c.mode != InferMode::cls_only || !p.classifier.empty();
  if (use_gda) k = obtain_classifier(p, c, l, m);
  const PatchScorer scorer = use_gda ? PatchScorer::gda(k) : PatchScorer::text(l.prototypes, c.logit_scale);
  const PipelineConfig pc = pipeline_config(c);
  const EvalResult r =
      evaluate_scorer(experiment_for(l), scorer, pc.infer, config_digest(pc), &m.timings);

  write_text(dir / "eval.csv", eval_csv(r, l.prototypes.class_names));
  write_text(dir / "eval.json", eval_json(r, l.prototypes.class_names));
  m.outputs = {(dir / "eval.csv").string(), (dir / "eval.json").string()};
  m.extra["map"] = r.map;
  write_manifest(dir, m, &c);
  std::printf("mAP %.4f over %zu classes (%zu undefined)\n", 100.0 * r.map,
              r.per_class_ap.size() - r.undefined_classes.size(), r.undefined_classes.size());
  check_undefined(r, c, l.prototypes);
  return kExitOk;
}

int cmd_ablate(const Overrides& o, Paths p) {
  apply_dataset(p);
  const RunConfig c = effective_config(o, p);
  apply_threads(c);
  Manifest m;
  m.subcommand = "ablate";
  const Loaded l = load_inputs(p, c, p.classifier.empty(), m);
  const fs::path dir = output_dir(p.out_dir);
  const GdaClassifier k = obtain_classifier(p, c, l, m);
  const auto rows = ablation_grid(experiment_for(l), pipeline_config(c), &k, &m.timings);

  write_text(dir / "ablation.csv", ablation_csv(rows));
  write_text(dir / "ablation.json", ablation_json(rows, l.prototypes.class_names));
  m.outputs = {(dir / "ablation.csv").string(), (dir / "ablation.json").string()};
  write_manifest(dir, m, &c);
  std::printf("%-6s %-6s %8s\n", "PVCL", "PAA", "mAP");
  for (const auto& row : rows) {
    std::printf("%-6s %-6s %8.2f\n", row.pvcl ? "on" : "off", row.paa ? "on" : "off",
                100.0 * row.result.map);
  }
  for (const auto& row : rows) check_undefined(row.result, c, l.prototypes);
  return kExitOk;
}

struct SweepArgs {
  std::string param;
  std::vector<double> values;
};

int cmd_sweep(const Overrides& o, Paths p, const SweepArgs& a) {
  apply_dataset(p);
  const RunConfig c = effective_config(o, p);
  apply_threads(c);
  SweepParam param;
  std::string name;
  if (a.param == "K" || a.param == "bank_capacity") {
    param = SweepParam::bank_capacity;
    name = "K";
  } else if (a.param == "alpha") {
    param = SweepParam::alpha;
    name = "alpha";
  } else {
    throw UsageError("--param must be K or alpha");
  }
  if (a.values.empty()) throw UsageError("--values needs at least one value");
  if (param == SweepParam::bank_capacity && !p.classifier.empty()) {
    throw UsageError("a K sweep refits the classifier; drop --classifier");
  }
  for (const double v : a.values) {
    if (param == SweepParam::alpha && !(v >= 0.0 && v <= 1.0)) throw UsageError("alpha values must lie in [0, 1]");
    if (param == SweepParam::bank_capacity && (!(v >= 1.0) || v != std::floor(v))) {
      throw UsageError("K values must be positive integers");
    }
  }
  Manifest m;
  m.subcommand = "sweep";
  const Loaded l = load_inputs(p, c, true, m);
  const fs::path dir = output_dir(p.out_dir);
  const auto curve = sweep(experiment_for(l), pipeline_config(c), param, a.values, &m.timings);

  const fs::path out = dir / ("sweep_" + name + ".csv");
  write_text(out, sweep_csv(curve, name));
  m.outputs = {out.string()};
  m.extra["param"] = name;
  m.extra["values"] = a.values;
  write_manifest(dir, m, &c);
  for (const auto& pt : curve) std::printf("%s=%g mAP %.4f\n", name.c_str(), pt.value, 100.0 * pt.result.map);
  for (const auto& pt : curve) check_undefined(pt.result, c, l.prototypes);
  return kExitOk;
}

int cmd_breakdown(const Overrides& o, Paths p, const std::vector<std::string>& classes) {
  apply_dataset(p);
  const RunConfig c = effective_config(o, p);
  apply_threads(c);
  Manifest m;
  m.subcommand = "breakdown";
  const Loaded l = load_inputs(p, c, p.classifier.empty(), m);
  const fs::path dir = output_dir(p.out_dir);
  const GdaClassifier k = obtain_classifier(p, c, l, m);
  const auto rows = scale_breakdown(experiment_for(l), pipeline_config(c), classes, &k, &m.timings);

  write_text(dir / "breakdown.csv", breakdown_csv(rows));
  m.outputs = {(dir / "breakdown.csv").string()};
  write_manifest(dir, m, &c);
  auto fmt = [](const std::optional<double>& v) {
    char buf[32];
    if (!v) return std::string("-");
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *v);
    return std::string(buf);
  };
  std::printf("%-16s %10s %10s %10s\n", "class", "cls_only", "patch_only", "fused");
  for (const auto& r : rows) {
    std::printf("%-16s %10s %10s %10s\n", r.class_name.c_str(), fmt(r.ap_cls_only).c_str(),
                fmt(r.ap_patch_only).c_str(), fmt(r.ap_fused).c_str());
  }
  return kExitOk;
}

int cmd_inspect(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  char magic[4] = {};
  in.read(magic, 4);
  const std::string tag(magic, static_cast<std::size_t>(in.gcount()));
  json j;
  j["path"] = path;
  if (tag == "PIAC") {
    const StoredClassifier s = read_classifier(path);
    j["kind"] = "classifier";
    j["dim"] = s.classifier.dim();
    j["classes"] = s.classifier.num_classes();
    j["provenance"] = static_cast<std::uint32_t>(s.classifier.provenance);
    j["fallback_classes"] = s.classifier.fallback_classes;
    j["metadata"] = s.metadata_json.empty() ? json(nullptr) : json::parse(s.metadata_json);
  } else {
    const FileSummary f = read_file_summary(path);
    j["magic"] = f.magic;
    j["version"] = f.version;
    j["flags"] = f.flags;
    j["dim"] = f.dim;
    j["classes"] = f.num_classes;
    if (f.flags & 4u) {
      const TextPrototypeSet t = read_text_prototypes(path);
      j["kind"] = "text_prototypes";
      j["class_names"] = t.class_names;
    } else {
      const EmbeddingSet e = read_embedding_file(path, ReadOptions{false});
      j["kind"] = "embeddings";
      j["images"] = f.num_images;
      j["patches"] = f.num_patches;
      j["labelled"] = e.labels.has_value();
      if (e.labels) {
        std::vector<std::size_t> pos(static_cast<std::size_t>(e.labels->cols()), 0);
        for (Eigen::Index c = 0; c < e.labels->cols(); ++c) {
          for (Eigen::Index i = 0; i < e.labels->rows(); ++i) pos[static_cast<std::size_t>(c)] += (*e.labels)(i, c);
        }
        j["positives_per_class"] = pos;
      }
    }
  }
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

InferMode parse_mode(const std::string& name) {
  if (name == "full") return InferMode::full;
  if (name == "patch_only") return InferMode::patch_only;
  if (name == "cls_only") return InferMode::cls_only;
  throw Error("unknown mode '" + name + "' (expected full, patch_only or cls_only)");
}

std::string mode_name(InferMode mode) {
  switch (mode) {
    case InferMode::full: return "full";
    case InferMode::patch_only: return "patch_only";
    case InferMode::cls_only: return "cls_only";
  }
  return "full";
}

json to_json(const RunConfig& c) {
  return {{"K", c.bank_capacity},
          {"alpha", c.alpha},
          {"logit_scale", c.logit_scale},
          {"temperature", c.temperature},
          {"mode", mode_name(c.mode)},
          {"transductive", c.transductive},
          {"secondary_softmax", c.secondary_softmax},
          {"stage1_shrinkage", c.stage1_shrinkage},
          {"self_consistent_covariance", c.self_consistent_covariance},
          {"allow_empty_classes", c.allow_empty_classes},
          {"normalize", c.normalize},
          {"cls_through_gda", c.cls_through_gda},
          {"threads", c.threads},
          {"seed", c.seed}};
}

RunConfig apply_json(const json& j, RunConfig c) {
  if (!j.is_object()) throw Error("run config must be a JSON object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      const json& v = it.value();
      if (k == "K") c.bank_capacity = v.get<std::size_t>();
      else if (k == "alpha") c.alpha = v.get<double>();
      else if (k == "logit_scale") c.logit_scale = v.get<double>();
      else if (k == "temperature") c.temperature = v.get<double>();
      else if (k == "mode") c.mode = parse_mode(v.get<std::string>());
      else if (k == "transductive") c.transductive = v.get<bool>();
      else if (k == "secondary_softmax") c.secondary_softmax = v.get<bool>();
      else if (k == "stage1_shrinkage") c.stage1_shrinkage = v.get<bool>();
      else if (k == "self_consistent_covariance") c.self_consistent_covariance = v.get<bool>();
      else if (k == "allow_empty_classes") c.allow_empty_classes = v.get<bool>();
      else if (k == "normalize") c.normalize = v.get<bool>();
      else if (k == "cls_through_gda") c.cls_through_gda = v.get<bool>();
      else if (k == "threads") c.threads = v.get<int>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else throw Error("unknown run config key '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw Error(std::string("bad run config value: ") + e.what());
  }
  return c;
}

PipelineConfig pipeline_config(const RunConfig& c) {
  PipelineConfig p;
  p.pvcl.bank_capacity = c.bank_capacity;
  p.pvcl.logit_scale = c.logit_scale;
  p.pvcl.stage1_shrinkage = c.stage1_shrinkage;
  p.pvcl.denominator =
      c.self_consistent_covariance ? CovarianceDenominator::unbiased : CovarianceDenominator::as_printed;
  p.infer.alpha = c.alpha;
  p.infer.temperature = c.temperature;
  p.infer.logit_scale = c.logit_scale;
  p.infer.mode = c.mode;
  p.infer.secondary_softmax = c.secondary_softmax;
  p.infer.cls_through_gda = c.cls_through_gda;
  return p;
}

int run(int argc, char** argv) {
  CLI::App app{"piaa: training-free patch-level multi-label inference"};
  app.require_subcommand(1);

  Overrides o;
  Paths p;

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "generate a synthetic labelled dataset");
  synth->add_option("--spec", synth_args.spec, "key = value spec file");
  synth->add_option("--set", synth_args.sets, "extra key=value line (repeatable)");
  synth->add_option("--seed", synth_args.seed, "override the spec seed");
  synth->add_option("--adapt-images", synth_args.adapt_images, "images in the unlabeled adaptation split");
  synth->add_option("--threads", synth_args.threads, "worker threads");
  synth->add_option("--out-dir", synth_args.out_dir, "output directory")->required();

  auto* fit = app.add_subcommand("fit", "fit the patch-level visual classifier");
  add_pipeline_options(fit, o, p);
  fit->add_option("--out", p.out, "classifier output path (.piac)");

  InferArgs infer_args;
  auto* infer = app.add_subcommand("infer", "score images");
  add_pipeline_options(infer, o, p);
  infer->add_option("--format", infer_args.format, "csv | jsonl");
  infer->add_flag("--dump-patches", infer_args.dump_patches, "also write per-patch distributions");

  auto* eval = app.add_subcommand("eval", "score and rank labelled images (per-class AP, mAP)");
  add_pipeline_options(eval, o, p);

  auto* ablate = app.add_subcommand("ablate", "four-way PVCL x PAA ablation");
  add_pipeline_options(ablate, o, p);

  SweepArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand("sweep", "mAP as a function of K or alpha");
  add_pipeline_options(sweep_cmd, o, p);
  sweep_cmd->add_option("--param", sweep_args.param, "K | alpha")->required();
  sweep_cmd->add_option("--values", sweep_args.values, "comma-separated values")
      ->delimiter(',')
      ->required();

  std::vector<std::string> classes;
  auto* breakdown = app.add_subcommand("breakdown", "per-class AP: cls-only vs patch-only vs fused");
  add_pipeline_options(breakdown, o, p);
  breakdown->add_option("--classes", classes, "comma-separated class names (default: all)")
      ->delimiter(',');

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect", "print a file's header and contents summary");
  inspect->add_option("file", inspect_path, "PIAA or PIAC file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_args);
    if (fit->parsed()) return cmd_fit(o, p);
    if (infer->parsed()) return cmd_infer(o, p, infer_args);
    if (eval->parsed()) return cmd_eval(o, p);
    if (ablate->parsed()) return cmd_ablate(o, p);
    if (sweep_cmd->parsed()) return cmd_sweep(o, p, sweep_args);
    if (breakdown->parsed()) return cmd_breakdown(o, p, classes);
    if (inspect->parsed()) return cmd_inspect(inspect_path);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UndefinedAp& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUndefinedAp;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDataError;
  }
  return kExitUsage;
}

int run(const std::vector<std::string>& args) {
  std::vector<std::string> storage;
  storage.reserve(args.size() + 1);
  storage.emplace_back("piaa");
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  argv.push_back(nullptr);
  return run(static_cast<int>(storage.size()), argv.data());
}

}  // namespace piaa::cli
