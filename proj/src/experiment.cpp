#include "longtail/experiment.hpp"

#include "longtail/serialize.hpp"
#include "longtail/sg_adapter.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace longtail {

namespace {

constexpr const char* kMetricsCols =
    "epoch,split,acc_all,acc_head,acc_med,acc_tail,loss";
constexpr const char* kAblationHeader =
    "sg,init,cf,fit,seed,epoch,split,acc_all,acc_head,acc_med,acc_tail,loss";
constexpr const char* kSweepHeader =
    "param,value,seed,epoch,split,acc_all,acc_head,acc_med,acc_tail,loss";

std::string hex16(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

void append_number(std::string& out, Scalar v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, r.ptr);
}

std::string metrics_row(const Metrics& m) {
  const std::string full = metrics_csv({m});
  const size_t nl = full.find('\n');
  return full.substr(nl + 1, full.size() - nl - 2);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << text;
  if (!os) throw std::runtime_error("short write to " + path);
}

nlohmann::json metrics_json(const Metrics& m) {
  nlohmann::json j;
  j["epoch"] = m.epoch;
  j["split"] = m.split;
  j["acc_all"] = m.acc_all;
  auto set_opt = [&](const char* key, const std::optional<Scalar>& acc) {
    if (acc)
      j[key] = *acc;
    else
      j[key] = nullptr;
  };
  set_opt("acc_head", m.acc_head);
  set_opt("acc_med", m.acc_med);
  set_opt("acc_tail", m.acc_tail);
  j["loss"] = m.loss;
  return j;
}

nlohmann::json record_json(const RunRecord& rec) {
  nlohmann::json j;
  j["aggregate"] = {{"median", rec.acc_all.median},
                    {"min", rec.acc_all.min},
                    {"max", rec.acc_all.max}};
  nlohmann::json seeds = nlohmann::json::array();
  for (const SeedRun& sr : rec.per_seed)
    seeds.push_back(
        {{"seed", sr.seed}, {"final", metrics_json(sr.final_test)}});
  j["per_seed"] = std::move(seeds);
  return j;
}

nlohmann::json param_summary(const ExperimentConfig& cfg,
                             const FoundationBundle& bundle) {
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seeds.front();
  SageModel model = make_model(tc, bundle);
  const EncoderConfig& ec = bundle.encoder.config;
  const long per_block = tc.flags.sg
                             ? sg_param_count(ec.width, ec.bottleneck)
                             : adaptformer_param_count(ec.width, ec.bottleneck);
  nlohmann::json j;
  j["adapter_per_block"] = per_block;
  j["adapters_total"] = per_block * ec.depth;
  j["classifier"] = static_cast<long>(cfg.task.classes) * ec.width;
  j["fit"] = tc.flags.fit ? 2 : 0;
  j["trainable_total"] = total_size(trainable_params(model, tc.flags));
  return j;
}

RunRecord run_seeds(const ExperimentConfig& cfg, const FoundationBundle& bundle,
                    const TaskData& data) {
  RunRecord rec;
  rec.config_hash = config_hash(cfg);
  for (uint64_t seed : cfg.seeds) {
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    TrainResult tr = train(tc, bundle, data);
    SeedRun sr;
    sr.seed = seed;
    sr.history = std::move(tr.history);
    const auto it =
        std::find_if(sr.history.rbegin(), sr.history.rend(),
                     [](const Metrics& m) { return m.split == "test"; });
    if (it == sr.history.rend())
      throw std::logic_error("run: training produced no test rows");
    sr.final_test = *it;
    rec.per_seed.push_back(std::move(sr));
  }
  rec.acc_all = aggregate_over(rec.per_seed);
  return rec;
}

}  // namespace

void ExperimentConfig::validate() const {
  task.validate();
  train.validate();
  if (!(noise >= 0.0))
    throw std::invalid_argument("config: noise must be >= 0");
  if (test_per_class < 1)
    throw std::invalid_argument("config: test-per-class must be >= 1");
  if (seeds.empty()) throw std::invalid_argument("config: seed list is empty");
  if (out.empty()) throw std::invalid_argument("config: out directory is empty");
}

std::string ExperimentConfig::cache_dir() const {
  return cache.empty() ? out + "/cache" : cache;
}

nlohmann::json to_flat_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["classes"] = cfg.task.classes;
  j["n1"] = cfg.task.n1;
  j["beta"] = cfg.task.beta;
  j["task-seed"] = cfg.task.seed;
  j["noise"] = cfg.noise;
  j["test-per-class"] = cfg.test_per_class;
  j["epochs"] = cfg.train.epochs;
  j["batch-size"] = cfg.train.batch_size;
  j["lr"] = cfg.train.lr0;
  j["momentum"] = cfg.train.momentum;
  j["alpha"] = cfg.train.alpha;
  j["scale"] = cfg.train.scale;
  j["group-hi"] = cfg.train.group_hi;
  j["group-lo"] = cfg.train.group_lo;
  j["mu"] = cfg.train.loss.mu;
  j["gamma"] = cfg.train.loss.gamma;
  j["lambda1"] = cfg.train.loss.lambda1;
  j["lambda2"] = cfg.train.loss.lambda2;
  j["lambda3"] = cfg.train.loss.lambda3;
  nlohmann::json ablate = nlohmann::json::array();
  if (!cfg.train.flags.sg) ablate.push_back("sg");
  if (!cfg.train.flags.init) ablate.push_back("init");
  if (!cfg.train.flags.cf) ablate.push_back("cf");
  if (!cfg.train.flags.fit) ablate.push_back("fit");
  j["ablate"] = std::move(ablate);
  j["seed"] = cfg.seeds;
  j["out"] = cfg.out;
  j["cache"] = cfg.cache;
  return j;
}

namespace {

std::vector<std::string> ablate_list(const nlohmann::json& v) {
  std::vector<std::string> names;
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    size_t start = 0;
    while (start <= s.size()) {
      const size_t comma = s.find(',', start);
      const std::string part = s.substr(start, comma - start);
      if (!part.empty()) names.push_back(part);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  } else if (v.is_array()) {
    for (const auto& e : v) names.push_back(e.get<std::string>());
  } else {
    throw std::invalid_argument("config: ablate must be a list of names");
  }
  return names;
}

}  // namespace

void apply_ablate_names(AblationFlags& flags,
                        const std::vector<std::string>& names) {
  flags = AblationFlags{};
  for (const std::string& n : names) {
    if (n == "none")
      continue;
    else if (n == "sg")
      flags.sg = false;
    else if (n == "init")
      flags.init = false;
    else if (n == "cf")
      flags.cf = false;
    else if (n == "fit")
      flags.fit = false;
    else
      throw std::invalid_argument("config: unknown ablate name '" + n + "'");
  }
}

ExperimentConfig config_from_json(const nlohmann::json& j,
                                  ExperimentConfig base) {
  if (!j.is_object())
    throw std::invalid_argument("config: expected a json object");
  for (const auto& [key, value] : j.items()) {
    if (key == "classes")
      base.task.classes = value.get<int>();
    else if (key == "n1")
      base.task.n1 = value.get<int>();
    else if (key == "beta")
      base.task.beta = value.get<Scalar>();
    else if (key == "task-seed")
      base.task.seed = value.get<uint64_t>();
    else if (key == "noise")
      base.noise = value.get<Scalar>();
    else if (key == "test-per-class")
      base.test_per_class = value.get<int>();
    else if (key == "epochs")
      base.train.epochs = value.get<int>();
    else if (key == "batch-size")
      base.train.batch_size = value.get<int>();
    else if (key == "lr")
      base.train.lr0 = value.get<Scalar>();
    else if (key == "momentum")
      base.train.momentum = value.get<Scalar>();
    else if (key == "alpha")
      base.train.alpha = value.get<Scalar>();
    else if (key == "scale")
      base.train.scale = value.get<Scalar>();
    else if (key == "group-hi")
      base.train.group_hi = value.get<Scalar>();
    else if (key == "group-lo")
      base.train.group_lo = value.get<Scalar>();
    else if (key == "mu")
      base.train.loss.mu = value.get<Scalar>();
    else if (key == "gamma")
      base.train.loss.gamma = value.get<Scalar>();
    else if (key == "lambda1")
      base.train.loss.lambda1 = value.get<Scalar>();
    else if (key == "lambda2")
      base.train.loss.lambda2 = value.get<Scalar>();
    else if (key == "lambda3")
      base.train.loss.lambda3 = value.get<Scalar>();
    else if (key == "ablate")
      apply_ablate_names(base.train.flags, ablate_list(value));
    else if (key == "seed") {
      if (value.is_array())
        base.seeds = value.get<std::vector<uint64_t>>();
      else
        base.seeds = {value.get<uint64_t>()};
    } else if (key == "out")
      base.out = value.get<std::string>();
    else if (key == "cache")
      base.cache = value.get<std::string>();
    else
      throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  return base;
}

uint64_t config_hash(const ExperimentConfig& cfg) {
  nlohmann::json j = to_flat_json(cfg);
  j.erase("out");
  j.erase("cache");
  return fnv1a(j.dump());
}

namespace {

// keyed on what pretraining actually consumes: the generative family and the
// pretraining recipe (the balanced draw ignores n1/beta and the test split)
uint64_t foundation_key(const ExperimentConfig& cfg) {
  const FoundationConfig fc;
  const EncoderConfig& ec = fc.encoder;
  nlohmann::json j;
  j["task"] = {{"classes", cfg.task.classes},
               {"seed", cfg.task.seed},
               {"noise", cfg.noise},
               {"grid", 8},
               {"patch", 4}};
  j["foundation"] = {{"per_class", fc.per_class},
                     {"epochs", fc.epochs},
                     {"batch_size", fc.batch_size},
                     {"lr", fc.lr},
                     {"momentum", fc.momentum},
                     {"weight_decay", fc.weight_decay},
                     {"scale", fc.scale},
                     {"templates", fc.templates},
                     {"jitter", fc.jitter},
                     {"seed", fc.seed}};
  j["encoder"] = {{"depth", ec.depth},
                  {"width", ec.width},
                  {"heads", ec.heads},
                  {"head_width", ec.head_width},
                  {"bottleneck", ec.bottleneck}};
  return fnv1a(j.dump());
}

}  // namespace

FoundationBundle cached_foundation(const ExperimentConfig& cfg) {
  const std::filesystem::path dir =
      std::filesystem::path(cfg.cache_dir()) / hex16(foundation_key(cfg));
  if (std::filesystem::exists(dir / "encoder.bin") &&
      std::filesystem::exists(dir / "text.csv"))
    return load_foundation(dir.string());
  const SyntheticTaskSpec spec =
      make_task(cfg.task, 8, 4, cfg.noise, cfg.test_per_class);
  FoundationBundle bundle = build_foundation(spec, FoundationConfig{});
  save_foundation(dir.string(), bundle);
  return bundle;
}

Scalar median_of(std::vector<Scalar> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty series");
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Aggregate aggregate_over(const std::vector<SeedRun>& per_seed) {
  std::vector<Scalar> finals;
  finals.reserve(per_seed.size());
  for (const SeedRun& sr : per_seed) finals.push_back(sr.final_test.acc_all);
  Aggregate a;
  a.median = median_of(finals);
  a.min = *std::min_element(finals.begin(), finals.end());
  a.max = *std::max_element(finals.begin(), finals.end());
  return a;
}

RunRecord run(const ExperimentConfig& cfg) {
  cfg.validate();
  const SyntheticTaskSpec spec =
      make_task(cfg.task, 8, 4, cfg.noise, cfg.test_per_class);
  const TaskData data = generate(spec);
  const FoundationBundle bundle = cached_foundation(cfg);
  const RunRecord rec = run_seeds(cfg, bundle, data);

  std::filesystem::create_directories(cfg.out);
  std::vector<Metrics> all;
  for (const SeedRun& sr : rec.per_seed)
    all.insert(all.end(), sr.history.begin(), sr.history.end());
  save_metrics_csv(cfg.out + "/metrics.csv", all);

  nlohmann::json summary;
  summary["config"] = to_flat_json(cfg);
  summary["config_hash"] = hex16(rec.config_hash);
  summary["result"] = record_json(rec);
  summary["params"] = param_summary(cfg, bundle);
  write_text(cfg.out + "/summary.json", summary.dump(2) + "\n");
  return rec;
}

std::vector<AblationFlags> ablation_ladder() {
  AblationFlags none{false, false, false, false};
  AblationFlags sg{true, false, false, false};
  AblationFlags sg_init{true, true, false, false};
  AblationFlags sg_init_cf{true, true, true, false};
  AblationFlags all{true, true, true, true};
  return {none, sg, sg_init, sg_init_cf, all};
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = kAblationHeader;
  out += '\n';
  for (const AblationRow& row : rows) {
    std::string prefix;
    for (bool b : {row.flags.sg, row.flags.init, row.flags.cf, row.flags.fit}) {
      prefix += b ? '1' : '0';
      prefix += ',';
    }
    for (const SeedRun& sr : row.record.per_seed)
      for (const Metrics& m : sr.history) {
        if (m.split != "test") continue;
        out += prefix;
        out += std::to_string(sr.seed);
        out += ',';
        out += metrics_row(m);
        out += '\n';
      }
  }
  return out;
}

std::vector<AblationCsvRow> parse_ablation_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kAblationHeader)
    throw std::invalid_argument("ablation csv: missing or wrong header");
  std::vector<AblationCsvRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> head;
    size_t start = 0;
    while (head.size() < 5) {
      const size_t comma = line.find(',', start);
      if (comma == std::string::npos)
        throw std::invalid_argument("ablation csv: truncated row");
      head.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    AblationCsvRow row;
    bool* flags[4] = {&row.flags.sg, &row.flags.init, &row.flags.cf,
                      &row.flags.fit};
    for (int i = 0; i < 4; ++i) {
      if (head[i] == "1")
        *flags[i] = true;
      else if (head[i] == "0")
        *flags[i] = false;
      else
        throw std::invalid_argument("ablation csv: bad flag cell '" + head[i] +
                                    "'");
    }
    const char* first = head[4].data();
    const char* last = first + head[4].size();
    const auto r = std::from_chars(first, last, row.seed);
    if (r.ec != std::errc{} || r.ptr != last)
      throw std::invalid_argument("ablation csv: bad seed cell '" + head[4] +
                                  "'");
    const std::string rest = line.substr(start);
    const auto parsed =
        parse_metrics_csv(std::string(kMetricsCols) + '\n' + rest + '\n');
    if (parsed.size() != 1)
      throw std::invalid_argument("ablation csv: bad metrics cells");
    row.metrics = parsed.front();
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& base) {
  base.validate();
  const SyntheticTaskSpec spec =
      make_task(base.task, 8, 4, base.noise, base.test_per_class);
  const TaskData data = generate(spec);
  const FoundationBundle bundle = cached_foundation(base);

  std::vector<AblationRow> rows;
  for (const AblationFlags& flags : ablation_ladder()) {
    ExperimentConfig cfg = base;
    cfg.train.flags = flags;
    rows.push_back({flags, run_seeds(cfg, bundle, data)});
  }

  std::filesystem::create_directories(base.out);
  write_text(base.out + "/ablation.csv", ablation_csv(rows));

  nlohmann::json summary;
  summary["config"] = to_flat_json(base);
  summary["config_hash"] = hex16(config_hash(base));
  nlohmann::json jrows = nlohmann::json::array();
  for (const AblationRow& row : rows) {
    nlohmann::json r = record_json(row.record);
    r["flags"] = {{"sg", row.flags.sg},
                  {"init", row.flags.init},
                  {"cf", row.flags.cf},
                  {"fit", row.flags.fit}};
    jrows.push_back(std::move(r));
  }
  summary["rows"] = std::move(jrows);
  write_text(base.out + "/summary.json", summary.dump(2) + "\n");
  return rows;
}

void apply_sweep_param(TrainConfig& tc, const std::string& param,
                       Scalar value) {
  if (param == "alpha")
    tc.alpha = value;
  else if (param == "mu")
    tc.loss.mu = value;
  else if (param == "gamma")
    tc.loss.gamma = value;
  else if (param == "lambda1")
    tc.loss.lambda1 = value;
  else if (param == "lambda2")
    tc.loss.lambda2 = value;
  else if (param == "lambda3")
    tc.loss.lambda3 = value;
  else
    throw std::invalid_argument("sweep: unknown parameter '" + param + "'");
}

std::string sweep_csv(const std::vector<SweepPoint>& points) {
  std::string out = kSweepHeader;
  out += '\n';
  for (const SweepPoint& p : points) {
    out += p.param;
    out += ',';
    append_number(out, p.value);
    out += ',';
    out += std::to_string(p.seed);
    out += ',';
    out += metrics_row(p.final_test);
    out += '\n';
  }
  return out;
}

std::vector<SweepPoint> run_sweep(const ExperimentConfig& base,
                                  const std::string& param,
                                  const std::vector<Scalar>& values) {
  base.validate();
  if (values.empty()) throw std::invalid_argument("sweep: no values given");
  {
    TrainConfig probe = base.train;
    apply_sweep_param(probe, param, values.front());  // validates the name
  }
  const SyntheticTaskSpec spec =
      make_task(base.task, 8, 4, base.noise, base.test_per_class);
  const TaskData data = generate(spec);
  const FoundationBundle bundle = cached_foundation(base);

  std::vector<SweepPoint> points;
  for (Scalar value : values) {
    ExperimentConfig cfg = base;
    apply_sweep_param(cfg.train, param, value);
    cfg.train.validate();
    const RunRecord rec = run_seeds(cfg, bundle, data);
    for (const SeedRun& sr : rec.per_seed)
      points.push_back({param, value, sr.seed, sr.final_test});
  }
  std::filesystem::create_directories(base.out);
  write_text(base.out + "/sweep.csv", sweep_csv(points));
  return points;
}

}  // namespace longtail
