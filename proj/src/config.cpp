// SPDX-License-Identifier: Apache-2.0
#include "entprop/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <functional>
#include <sstream>

#include "entprop/io.hpp"

namespace entprop {

std::string to_string(Precision p) { return p == Precision::Float ? "float" : "double"; }
std::string to_string(DataSource s) { return s == DataSource::Synthetic ? "synthetic" : "cifar100"; }

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  fail(ErrorCode::Config, "config key '" + key + "': invalid value '" + value + "' (expected " + expected + ")");
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

template <typename I>
I to_integer(const std::string& key, const std::string& v) {
  I out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(key, v, "true or false");
}

template <typename I>
std::vector<I> to_integers(const std::string& key, const std::string& v) {
  std::vector<I> out;
  for (const auto& item : split_list(v)) out.push_back(to_integer<I>(key, item));
  return out;
}

template <typename I>
std::string join(const std::vector<I>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string num(double v) { return format_number(v); }
std::string flag(bool b) { return b ? "true" : "false"; }

template <typename E>
E pick(const std::string& key, const std::string& v, std::initializer_list<std::pair<const char*, E>> options) {
  std::string names;
  for (const auto& [name, value] : options) {
    if (v == name) return value;
    names += (names.empty() ? "" : ", ") + std::string(name);
  }
  bad_value(key, v, "one of " + names);
}

template <typename E>
std::string name_of(E e, std::initializer_list<std::pair<const char*, E>> options) {
  for (const auto& [name, value] : options)
    if (value == e) return name;
  return "?";
}

const std::initializer_list<std::pair<const char*, ModelKind>> kModelKinds{{"small_cnn", ModelKind::SmallCNN},
                                                                          {"mlp", ModelKind::MLP}};
const std::initializer_list<std::pair<const char*, UncertaintyLabel>> kUncLabels{{"primary", UncertaintyLabel::Primary},
                                                                                {"mixed", UncertaintyLabel::Mixed}};
const std::initializer_list<std::pair<const char*, AdvLabelMode>> kAdvLabels{{"mixed", AdvLabelMode::Mixed},
                                                                            {"original_a", AdvLabelMode::OriginalA}};
const std::initializer_list<std::pair<const char*, AttackBNMode>> kBnModes{
    {"train_frozen", AttackBNMode::TrainFrozen}, {"train_update", AttackBNMode::TrainUpdate}, {"eval", AttackBNMode::Eval}};
const std::initializer_list<std::pair<const char*, OptimizerKind>> kOptKinds{{"sgd", OptimizerKind::SGD},
                                                                            {"adam", OptimizerKind::Adam}};
const std::initializer_list<std::pair<const char*, LrSchedule>> kSchedules{
    {"cosine", LrSchedule::Cosine}, {"step", LrSchedule::Step}, {"constant", LrSchedule::Constant}};
const std::initializer_list<std::pair<const char*, Precision>> kPrecisions{{"float", Precision::Float},
                                                                          {"double", Precision::Double}};
const std::initializer_list<std::pair<const char*, DataSource>> kSources{{"synthetic", DataSource::Synthetic},
                                                                        {"cifar100", DataSource::Cifar100}};

struct Key {
  const char* name;
  std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

using C = ExperimentConfig;
using S = const std::string&;

std::vector<CorruptionKind> suite_kinds(const EvalConfig& e) {
  std::vector<CorruptionKind> out;
  for (const auto& s : e.suite)
    if (std::find(out.begin(), out.end(), s.kind) == out.end()) out.push_back(s.kind);
  return out;
}

std::vector<int> suite_severities(const EvalConfig& e) {
  std::vector<int> out;
  for (const auto& s : e.suite)
    if (std::find(out.begin(), out.end(), s.severity) == out.end()) out.push_back(s.severity);
  std::sort(out.begin(), out.end());
  return out;
}

// Registry in serialization order. trainer.method is handled before everything else.
const std::vector<Key>& keys() {
  static const std::vector<Key> k = {
      {"experiment.name", [](C& c, S, S v) { c.name = v; }, [](const C& c) { return c.name; }},
      {"experiment.seed", [](C& c, S k, S v) { c.seed = to_integer<std::uint64_t>(k, v); },
       [](const C& c) { return std::to_string(c.seed); }},
      {"experiment.output_dir", [](C& c, S, S v) { c.output_dir = v; },
       [](const C& c) { return c.output_dir.string(); }},
      {"experiment.precision", [](C& c, S k, S v) { c.precision = pick(k, v, kPrecisions); },
       [](const C& c) { return to_string(c.precision); }},

      {"data.source", [](C& c, S k, S v) { c.data.source = pick(k, v, kSources); },
       [](const C& c) { return to_string(c.data.source); }},
      {"data.seed", [](C& c, S k, S v) { c.data.synthetic.seed = to_integer<std::uint64_t>(k, v); },
       [](const C& c) { return std::to_string(c.data.synthetic.seed); }},
      {"data.classes", [](C& c, S k, S v) { c.data.synthetic.classes = to_integer<std::size_t>(k, v); },
       [](const C& c) { return std::to_string(c.data.synthetic.classes); }},
      {"data.sample_shape", [](C& c, S k, S v) { c.data.synthetic.sample_shape = to_integers<std::size_t>(k, v); },
       [](const C& c) { return join(c.data.synthetic.sample_shape); }},
      {"data.samples_per_class",
       [](C& c, S k, S v) { c.data.synthetic.samples_per_class = to_integer<std::size_t>(k, v); },
       [](const C& c) { return std::to_string(c.data.synthetic.samples_per_class); }},
      {"data.test_samples_per_class",
       [](C& c, S k, S v) { c.data.test_samples_per_class = to_integer<std::size_t>(k, v); },
       [](const C& c) { return std::to_string(c.data.test_samples_per_class); }},
      {"data.spread", [](C& c, S k, S v) { c.data.synthetic.spread = to_double(k, v); },
       [](const C& c) { return num(c.data.synthetic.spread); }},
      {"data.train_path", [](C& c, S, S v) { c.data.train_path = v; },
       [](const C& c) { return c.data.train_path.string(); }},
      {"data.test_path", [](C& c, S, S v) { c.data.test_path = v; },
       [](const C& c) { return c.data.test_path.string(); }},
      {"data.limit", [](C& c, S k, S v) { c.data.limit = to_integer<std::size_t>(k, v); },
       [](const C& c) { return std::to_string(c.data.limit); }},

      {"model.kind", [](C& c, S k, S v) { c.model.kind = pick(k, v, kModelKinds); },
       [](const C& c) { return name_of(c.model.kind, kModelKinds); }},
      {"model.widths", [](C& c, S k, S v) { c.model.widths = to_integers<std::size_t>(k, v); },
       [](const C& c) { return join(c.model.widths); }},
      {"model.pool_after", [](C& c, S k, S v) { c.model.pool_after = to_integers<std::size_t>(k, v); },
       [](const C& c) { return join(c.model.pool_after); }},

      {"trainer.method", nullptr, [](const C& c) { return to_string(c.trainer.method); }},
      {"trainer.k", [](C& c, S k, S v) { c.trainer.k = to_double(k, v); }, [](const C& c) { return num(c.trainer.k); }},
      {"trainer.n", [](C& c, S k, S v) { c.trainer.n = to_integer<int>(k, v); },
       [](const C& c) { return std::to_string(c.trainer.n); }},
      {"trainer.p_adv", [](C& c, S k, S v) { c.trainer.p_adv = to_double(k, v); },
       [](const C& c) { return num(c.trainer.p_adv); }},
      {"trainer.mixup_alpha", [](C& c, S k, S v) { c.trainer.mixup_alpha = to_double(k, v); },
       [](const C& c) { return num(c.trainer.mixup_alpha); }},
      {"trainer.use_mixup", [](C& c, S k, S v) { c.trainer.use_mixup = to_bool(k, v); },
       [](const C& c) { return flag(c.trainer.use_mixup); }},
      {"trainer.use_free", [](C& c, S k, S v) { c.trainer.use_free = to_bool(k, v); },
       [](const C& c) { return flag(c.trainer.use_free); }},
      {"trainer.uncertainty", [](C& c, S, S v) { c.trainer.uncertainty = parse_uncertainty_metric(v); },
       [](const C& c) { return to_string(c.trainer.uncertainty); }},
      {"trainer.uncertainty_label", [](C& c, S k, S v) { c.trainer.uncertainty_label = pick(k, v, kUncLabels); },
       [](const C& c) { return name_of(c.trainer.uncertainty_label, kUncLabels); }},
      {"trainer.adv_label_mode", [](C& c, S k, S v) { c.trainer.adv_label_mode = pick(k, v, kAdvLabels); },
       [](const C& c) { return name_of(c.trainer.adv_label_mode, kAdvLabels); }},
      {"trainer.attack_bn_mode", [](C& c, S k, S v) { c.trainer.attack_bn_mode = pick(k, v, kBnModes); },
       [](const C& c) { return name_of(c.trainer.attack_bn_mode, kBnModes); }},
      {"trainer.epochs", [](C& c, S k, S v) { c.trainer.epochs = to_integer<int>(k, v); },
       [](const C& c) { return std::to_string(c.trainer.epochs); }},
      {"trainer.batch_size", [](C& c, S k, S v) { c.trainer.batch_size = to_integer<std::size_t>(k, v); },
       [](const C& c) { return std::to_string(c.trainer.batch_size); }},
      {"trainer.checked", [](C& c, S k, S v) { c.trainer.checked = to_bool(k, v); },
       [](const C& c) { return flag(c.trainer.checked); }},

      {"attack.epsilon", [](C& c, S k, S v) { c.trainer.attack.epsilon = to_double(k, v); },
       [](const C& c) { return num(c.trainer.attack.epsilon); }},
      {"attack.alpha", [](C& c, S k, S v) { c.trainer.attack.alpha = to_double(k, v); },
       [](const C& c) { return num(c.trainer.attack.alpha); }},

      {"optimizer.kind", [](C& c, S k, S v) { c.trainer.optimizer.kind = pick(k, v, kOptKinds); },
       [](const C& c) { return name_of(c.trainer.optimizer.kind, kOptKinds); }},
      {"optimizer.lr", [](C& c, S k, S v) { c.trainer.optimizer.lr = to_double(k, v); },
       [](const C& c) { return num(c.trainer.optimizer.lr); }},
      {"optimizer.momentum", [](C& c, S k, S v) { c.trainer.optimizer.momentum = to_double(k, v); },
       [](const C& c) { return num(c.trainer.optimizer.momentum); }},
      {"optimizer.weight_decay", [](C& c, S k, S v) { c.trainer.optimizer.weight_decay = to_double(k, v); },
       [](const C& c) { return num(c.trainer.optimizer.weight_decay); }},
      {"optimizer.beta1", [](C& c, S k, S v) { c.trainer.optimizer.beta1 = to_double(k, v); },
       [](const C& c) { return num(c.trainer.optimizer.beta1); }},
      {"optimizer.beta2", [](C& c, S k, S v) { c.trainer.optimizer.beta2 = to_double(k, v); },
       [](const C& c) { return num(c.trainer.optimizer.beta2); }},
      {"optimizer.adam_eps", [](C& c, S k, S v) { c.trainer.optimizer.adam_eps = to_double(k, v); },
       [](const C& c) { return num(c.trainer.optimizer.adam_eps); }},
      {"optimizer.schedule", [](C& c, S k, S v) { c.trainer.optimizer.schedule = pick(k, v, kSchedules); },
       [](const C& c) { return name_of(c.trainer.optimizer.schedule, kSchedules); }},
      {"optimizer.step_every", [](C& c, S k, S v) { c.trainer.optimizer.step_every = to_integer<int>(k, v); },
       [](const C& c) { return std::to_string(c.trainer.optimizer.step_every); }},
      {"optimizer.step_gamma", [](C& c, S k, S v) { c.trainer.optimizer.step_gamma = to_double(k, v); },
       [](const C& c) { return num(c.trainer.optimizer.step_gamma); }},
      {"optimizer.milestones", [](C& c, S k, S v) { c.trainer.optimizer.milestones = to_integers<int>(k, v); },
       [](const C& c) { return join(c.trainer.optimizer.milestones); }},

      {"eval.corruptions",
       [](C& c, S, S v) {
         std::vector<CorruptionKind> kinds;
         if (v == "all") kinds = all_corruption_kinds();
         else if (v != "none")
           for (const auto& name : split_list(v)) kinds.push_back(parse_corruption_kind(name));
         c.eval.suite = make_suite(kinds, suite_severities(c.eval).empty() ? std::vector<int>{1, 2, 3, 4, 5}
                                                                          : suite_severities(c.eval));
       },
       [](const C& c) {
         std::string s;
         for (CorruptionKind k : suite_kinds(c.eval)) s += (s.empty() ? "" : ",") + to_string(k);
         return s.empty() ? std::string("none") : s;
       }},
      {"eval.severities",
       [](C& c, S k, S v) {
         const auto sev = to_integers<int>(k, v);
         for (int s : sev)
           if (s < 1 || s > 5) bad_value(k, v, "severities in 1..5");
         c.eval.suite = make_suite(suite_kinds(c.eval), sev);
       },
       [](const C& c) {
         const auto sev = suite_severities(c.eval);
         return sev.empty() ? std::string("1,2,3,4,5") : join(sev);
       }},
      {"eval.corruption_seed", [](C& c, S k, S v) { c.eval.corruption_seed = to_integer<std::uint64_t>(k, v); },
       [](const C& c) { return std::to_string(c.eval.corruption_seed); }},
      {"eval.sa_every", [](C& c, S k, S v) { c.eval.sa_every = to_integer<int>(k, v); },
       [](const C& c) { return std::to_string(c.eval.sa_every); }},
      {"eval.ra_every", [](C& c, S k, S v) { c.eval.ra_every = to_integer<int>(k, v); },
       [](const C& c) { return std::to_string(c.eval.ra_every); }},
      {"eval.pgd", [](C& c, S k, S v) { c.eval.pgd = to_bool(k, v); }, [](const C& c) { return flag(c.eval.pgd); }},
      {"eval.pgd_steps", [](C& c, S k, S v) { c.eval.pgd_config.steps = to_integer<int>(k, v); },
       [](const C& c) { return std::to_string(c.eval.pgd_config.steps); }},
      {"eval.pgd_epsilon", [](C& c, S k, S v) { c.eval.pgd_config.epsilon = to_double(k, v); },
       [](const C& c) { return num(c.eval.pgd_config.epsilon); }},
      {"eval.pgd_alpha", [](C& c, S k, S v) { c.eval.pgd_config.alpha = to_double(k, v); },
       [](const C& c) { return num(c.eval.pgd_config.alpha); }},
      {"eval.frechet", [](C& c, S k, S v) { c.eval.frechet = to_bool(k, v); },
       [](const C& c) { return flag(c.eval.frechet); }},
      {"eval.frechet_k", [](C& c, S k, S v) { c.eval.frechet_transform.k = to_double(k, v); },
       [](const C& c) { return num(c.eval.frechet_transform.k); }},
      {"eval.frechet_n", [](C& c, S k, S v) { c.eval.frechet_transform.n = to_integer<int>(k, v); },
       [](const C& c) { return std::to_string(c.eval.frechet_transform.n); }},
  };
  return k;
}

const Key* find_key(const std::string& name) {
  for (const Key& k : keys())
    if (name == k.name) return &k;
  return nullptr;
}

}  // namespace

bool ExperimentConfig::is_explicit(std::string_view key) const {
  return std::find(explicit_keys.begin(), explicit_keys.end(), key) != explicit_keys.end();
}

void ExperimentConfig::resolve_attack_defaults() {
  if (trainer.method != Method::EntProp) return;
  const auto [eps, alpha] = epsilon_schedule(std::max(1, trainer.n));
  if (!is_explicit("attack.epsilon")) trainer.attack.epsilon = eps;
  if (!is_explicit("attack.alpha")) trainer.attack.alpha = alpha;
}

void ExperimentConfig::validate() const {
  require(!name.empty(), ErrorCode::Config, "experiment.name must not be empty");
  if (data.source == DataSource::Synthetic) {
    require(data.synthetic.classes >= 2, ErrorCode::Config, "data.classes must be at least 2");
    require(data.synthetic.samples_per_class >= 1 && data.test_samples_per_class >= 1, ErrorCode::Config,
            "data.samples_per_class and data.test_samples_per_class must be positive");
    require(data.synthetic.spread > 0.0, ErrorCode::Config, "data.spread must be positive");
    require(data.synthetic.sample_shape.size() == 1 || data.synthetic.sample_shape.size() == 3, ErrorCode::Config,
            "data.sample_shape must be D or C,H,W");
  } else {
    require(!data.train_path.empty(), ErrorCode::Config, "data.train_path is required for cifar100");
    require(!data.test_path.empty(), ErrorCode::Config, "data.test_path is required for cifar100");
  }
  require(eval.sa_every >= 0 && eval.ra_every >= 0, ErrorCode::Config, "eval.sa_every/ra_every must be non-negative");
  require(eval.pgd_config.steps >= 1, ErrorCode::Config, "eval.pgd_steps must be at least 1");
  require(eval.pgd_config.epsilon >= 0.0 && eval.pgd_config.alpha > 0.0, ErrorCode::Config,
          "eval.pgd_epsilon must be non-negative and eval.pgd_alpha positive");
  require(eval.frechet_transform.k > 0.0 && eval.frechet_transform.k <= 1.0, ErrorCode::Config,
          "eval.frechet_k must lie in (0, 1]");
  require(eval.frechet_transform.n >= 1, ErrorCode::Config, "eval.frechet_n must be at least 1");
  try {
    model.validate();
  } catch (const Error& e) {
    fail(ErrorCode::Config, std::string("model: ") + e.what());
  }
  trainer.validate();
}

std::string ExperimentConfig::serialize() const {
  std::string out;
  std::string section;
  for (const Key& k : keys()) {
    const std::string name = k.name;
    const std::string sec = name.substr(0, name.find('.'));
    if (sec != section) {
      out += (section.empty() ? "[" : "\n[") + sec + "]\n";
      section = sec;
    }
    out += name.substr(sec.size() + 1) + " = " + k.get(*this) + "\n";
  }
  return out;
}

ExperimentConfig parse_config(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      require(line.back() == ']', ErrorCode::Config, "config line " + std::to_string(line_no) + ": bad section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorCode::Config, "config line " + std::to_string(line_no) + ": expected key = value");
    require(!section.empty(), ErrorCode::Config, "config line " + std::to_string(line_no) + ": key outside a section");
    const std::string key = section + "." + trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    require(find_key(key) != nullptr, ErrorCode::Config, "unknown config key '" + key + "'");
    for (const auto& e : entries)
      require(e.first != key, ErrorCode::Config, "config key '" + key + "' given twice");
    entries.emplace_back(key, value);
  }

  const auto method = std::find_if(entries.begin(), entries.end(), [](const auto& e) { return e.first == "trainer.method"; });
  require(method != entries.end(), ErrorCode::Config, "missing required config key 'trainer.method'");

  ExperimentConfig cfg;
  cfg.trainer = TrainerConfig::defaults_for(parse_method(method->second));
  bool data_seed = false;
  for (const Key& k : keys()) {
    const auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.first == k.name; });
    if (it == entries.end()) continue;
    cfg.explicit_keys.push_back(k.name);
    if (k.set) k.set(cfg, it->first, it->second);
    data_seed |= it->first == "data.seed";
  }
  if (!data_seed) cfg.data.synthetic.seed = cfg.seed;
  cfg.resolve_attack_defaults();
  cfg.trainer.seed = cfg.seed;
  cfg.model.seed = cfg.seed;
  cfg.eval.frechet_transform.mixup_alpha = cfg.trainer.mixup_alpha;
  cfg.eval.frechet_transform.batch_size = cfg.trainer.batch_size;
  cfg.eval.frechet_transform.seed = cfg.seed;
  const auto [feps, falpha] = epsilon_schedule(std::max(1, cfg.eval.frechet_transform.n));
  cfg.eval.frechet_transform.epsilon = feps;
  cfg.eval.frechet_transform.alpha = falpha;
  if (cfg.data.source == DataSource::Cifar100) {
    cfg.model.input_shape = {3, 32, 32};
    cfg.model.class_count = 100;
  } else {
    cfg.model.input_shape = cfg.data.synthetic.sample_shape;
    cfg.model.class_count = cfg.data.synthetic.classes;
    if (cfg.data.synthetic.sample_shape.size() == 1 && !cfg.is_explicit("model.kind")) cfg.model.kind = ModelKind::MLP;
  }
  if (cfg.output_dir.empty()) cfg.output_dir = std::filesystem::path("runs") / cfg.name;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) { return parse_config(read_file(path)); }

std::filesystem::path output_root() {
  if (const char* root = std::getenv("ENTPROP_OUTPUT_ROOT"); root != nullptr && *root != '\0') return root;
  return std::filesystem::current_path();
}

std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg) {
  if (cfg.output_dir.is_absolute()) return cfg.output_dir;
  return output_root() / cfg.output_dir;
}

}  // namespace entprop
