// SPDX-License-Identifier: Apache-2.0
#include "entprop/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "entprop/evaluation.hpp"
#include "entprop/io.hpp"

namespace entprop {

using nlohmann::json;

namespace {

json stats_json(const EntropyStats& s) {
  json j{{"sum", s.sum}, {"sum_sq", s.sum_sq}, {"count", s.count}};
  j["mean"] = s.count ? json(s.mean()) : json(nullptr);
  j["sd"] = s.count ? json(s.sd()) : json(nullptr);
  return j;
}

EntropyStats stats_from(const json& j) {
  EntropyStats s;
  s.sum = j.at("sum").get<double>();
  s.sum_sq = j.at("sum_sq").get<double>();
  s.count = j.at("count").get<std::uint64_t>();
  return s;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(digits) << v;
  return o.str();
}

void emit(const LogFn& log, const std::string& line) {
  if (log) log(line);
}

json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::Io, path.string() + ": malformed JSON (" + e.what() + ")");
  }
}

template <typename T>
void final_metrics(Model<T>& model, const Dataset& test, const ExperimentConfig& cfg, json& summary, const LogFn& log) {
  if (cfg.eval.pgd) {
    summary["pgd20"] = pgd_robust_accuracy(model, test, cfg.eval.pgd_config);
    emit(log, "pgd" + std::to_string(cfg.eval.pgd_config.steps) + " " + fmt(summary["pgd20"].get<double>()));
  }
  if (cfg.eval.frechet) {
    summary["frechet_clean_vs_transformed"] = feature_frechet(model, test, cfg.eval.frechet_transform);
    emit(log, "frechet " + fmt(summary["frechet_clean_vs_transformed"].get<double>()));
  }
}

template <typename T>
std::string run_typed(const ExperimentConfig& cfg, const LogFn& log) {
  const std::filesystem::path dir = resolve_output_dir(cfg);
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "config.effective.ini", cfg.serialize());

  const auto [train, test] = load_datasets(cfg.data);
  Model<T> model(cfg.model);
  const int epochs = cfg.trainer.epochs;
  const auto due = [epochs](int every, int epoch) {
    return epoch == epochs - 1 || (every > 0 && (epoch + 1) % every == 0);
  };

  std::string jsonl;
  TrainingHooks<T> hooks;
  hooks.on_epoch_end = [&](Model<T>& m, EpochRecord& rec) {
    if (due(cfg.eval.sa_every, rec.epoch)) rec.sa = standard_accuracy(m, test);
    if (!cfg.eval.suite.empty() && due(cfg.eval.ra_every, rec.epoch))
      rec.ra = robust_accuracy(m, test, cfg.eval.suite, cfg.eval.corruption_seed);
    if (rec.sa && rec.ra) rec.h_score = h_score(*rec.sa, *rec.ra);
    jsonl += record_to_json(rec) + "\n";
    std::string line = "epoch " + std::to_string(rec.epoch + 1) + "/" + std::to_string(epochs) + " loss " +
                       fmt(rec.total_loss) + " cost " + fmt(rec.measured_cost, 3);
    if (rec.sa) line += " sa " + fmt(*rec.sa);
    if (rec.ra) line += " ra " + fmt(*rec.ra);
    emit(log, line);
  };
  const RunResult run = run_training(model, train, cfg.trainer, hooks);

  write_file_atomic(dir / "records.jsonl", jsonl);
  model.save(dir / "model.ckpt");
  export_diagnostics(run, dir);

  json summary{{"name", cfg.name},
               {"method", to_string(cfg.trainer.method)},
               {"k", cfg.trainer.k},
               {"n", cfg.trainer.n},
               {"p_adv", cfg.trainer.p_adv},
               {"seed", cfg.seed},
               {"epochs", epochs},
               {"theoretical_cost", theoretical_cost(cfg.trainer)}};
  double cost = 0.0;
  for (const auto& r : run.records) cost += r.measured_cost;
  summary["measured_cost"] = run.records.empty() ? json(nullptr) : json(cost / static_cast<double>(run.records.size()));

  std::optional<double> sa, ra;
  if (!run.records.empty()) {
    sa = run.records.back().sa;
    ra = run.records.back().ra;
  } else {
    sa = standard_accuracy(model, test);
    if (!cfg.eval.suite.empty()) ra = robust_accuracy(model, test, cfg.eval.suite, cfg.eval.corruption_seed);
  }
  summary["sa"] = optional_json(sa);
  if (ra) summary["ra"] = *ra;
  if (sa && ra) summary["h_score"] = h_score(*sa, *ra);
  final_metrics(model, test, cfg, summary, log);

  const std::string text = summary.dump(2) + "\n";
  write_file_atomic(dir / "summary.json", text);
  std::string line = "final";
  if (sa) line += " SA " + fmt(*sa);
  if (ra) line += " RA " + fmt(*ra) + " H_score " + fmt(h_score(*sa, *ra));
  emit(log, line);
  return text;
}

template <typename T>
std::string eval_typed(const Archive& archive, const ExperimentConfig& cfg, const LogFn& log) {
  Model<T> model = Model<T>::load(archive);
  const Dataset test = load_datasets(cfg.data).second;
  require(test.sample_shape() == model.spec().input_shape && test.class_count == model.spec().class_count,
          ErrorCode::Shape, "eval: test data does not match the checkpoint's model");
  json summary;
  const double sa = standard_accuracy(model, test);
  summary["sa"] = sa;
  if (!cfg.eval.suite.empty()) {
    const double ra = robust_accuracy(model, test, cfg.eval.suite, cfg.eval.corruption_seed);
    summary["ra"] = ra;
    summary["h_score"] = h_score(sa, ra);
  }
  final_metrics(model, test, cfg, summary, log);
  const std::string text = summary.dump(2) + "\n";
  const std::filesystem::path dir = resolve_output_dir(cfg);
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "eval_summary.json", text);
  return text;
}

std::string grid_label(double v) {
  std::string s = format_number(v);
  std::replace(s.begin(), s.end(), '.', 'p');
  return s;
}

std::string csv_cell(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return "";
  return format_number(j[key].get<double>());
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace

std::string record_to_json(const EpochRecord& r) {
  json j{{"epoch", r.epoch},
         {"lr", r.lr},
         {"clean_loss", r.clean_loss},
         {"aux_loss", r.aux_loss},
         {"total_loss", r.total_loss},
         {"clean_entropy", stats_json(r.clean_entropy)},
         {"transformed_entropy", stats_json(r.transformed_entropy)},
         {"selected", r.selected},
         {"forward_samples", r.forward_samples},
         {"backward_samples", r.backward_samples},
         {"steps", r.steps},
         {"dataset_size", r.dataset_size},
         {"measured_cost", r.measured_cost},
         {"sa", optional_json(r.sa)},
         {"ra", optional_json(r.ra)},
         {"h_score", optional_json(r.h_score)}};
  return j.dump();
}

EpochRecord record_from_json(const std::string& line) {
  try {
    const json j = json::parse(line);
    EpochRecord r;
    r.epoch = j.at("epoch").get<int>();
    r.lr = j.at("lr").get<double>();
    r.clean_loss = j.at("clean_loss").get<double>();
    r.aux_loss = j.at("aux_loss").get<double>();
    r.total_loss = j.at("total_loss").get<double>();
    r.clean_entropy = stats_from(j.at("clean_entropy"));
    r.transformed_entropy = stats_from(j.at("transformed_entropy"));
    r.selected = j.at("selected").get<std::uint64_t>();
    r.forward_samples = j.at("forward_samples").get<std::uint64_t>();
    r.backward_samples = j.at("backward_samples").get<std::uint64_t>();
    r.steps = j.at("steps").get<std::size_t>();
    r.dataset_size = j.at("dataset_size").get<std::size_t>();
    r.measured_cost = j.at("measured_cost").get<double>();
    r.sa = optional_from(j.at("sa"));
    r.ra = optional_from(j.at("ra"));
    r.h_score = optional_from(j.at("h_score"));
    return r;
  } catch (const json::exception& e) {
    fail(ErrorCode::Io, std::string("record: malformed JSON line (") + e.what() + ")");
  }
}

std::pair<Dataset, Dataset> load_datasets(const DataConfig& cfg) {
  Dataset train, test;
  if (cfg.source == DataSource::Synthetic) {
    train = synth_clusters(cfg.synthetic, 0);
    SyntheticSpec t = cfg.synthetic;
    t.samples_per_class = cfg.test_samples_per_class;
    test = synth_clusters(t, 1);
  } else {
    train = load_cifar100_binary(cfg.train_path);
    test = load_cifar100_binary(cfg.test_path);
  }
  if (cfg.limit > 0) {
    for (Dataset* d : {&train, &test}) {
      if (d->size() <= cfg.limit) continue;
      std::vector<std::size_t> rows(cfg.limit);
      for (std::size_t i = 0; i < cfg.limit; ++i) rows[i] = i;
      d->images = gather_rows(d->images, rows);
      d->labels.resize(cfg.limit);
      d->sample_ids.resize(cfg.limit);
    }
  }
  return {std::move(train), std::move(test)};
}

std::string run_experiment(const ExperimentConfig& cfg, const LogFn& log) {
  cfg.validate();
  return cfg.precision == Precision::Float ? run_typed<float>(cfg, log) : run_typed<double>(cfg, log);
}

std::string cmd_train(const std::filesystem::path& config_path, const LogFn& log) {
  return run_experiment(load_config(config_path), log);
}

std::string cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& config_path,
                     const LogFn& log) {
  const ExperimentConfig cfg = load_config(config_path);
  const Archive archive = Archive::load(checkpoint);
  require(archive.contains("model.precision"), ErrorCode::Version, "eval: checkpoint has no model.precision entry");
  const std::string precision = archive.get_text("model.precision");
  if (precision == "single") return eval_typed<float>(archive, cfg, log);
  if (precision == "double") return eval_typed<double>(archive, cfg, log);
  fail(ErrorCode::Version, "eval: unsupported checkpoint precision '" + precision + "'");
}

std::string cmd_sweep(const std::filesystem::path& config_path, const std::vector<double>& ks,
                      const std::vector<int>& ns, const LogFn& log) {
  const ExperimentConfig base = load_config(config_path);
  const std::vector<double> kgrid = ks.empty() ? std::vector<double>{base.trainer.k} : ks;
  const std::vector<int> ngrid = ns.empty() ? std::vector<int>{base.trainer.n} : ns;
  // Validate the whole grid before any compute.
  std::vector<ExperimentConfig> runs;
  for (double k : kgrid)
    for (int n : ngrid) {
      ExperimentConfig c = base;
      c.trainer.k = k;
      c.trainer.n = n;
      c.resolve_attack_defaults();
      const std::string tag = "k" + grid_label(k) + "_n" + std::to_string(n);
      c.name = base.name + "_" + tag;
      c.output_dir = base.output_dir / "sweep" / tag;
      c.validate();
      runs.push_back(std::move(c));
    }

  std::string csv = "k,n,sa,ra,h_score,measured_cost,theoretical_cost\n";
  for (const ExperimentConfig& c : runs) {
    emit(log, "sweep point k=" + format_number(c.trainer.k) + " n=" + std::to_string(c.trainer.n));
    const json s = json::parse(run_experiment(c, log));
    csv += format_number(c.trainer.k) + "," + std::to_string(c.trainer.n) + "," + csv_cell(s, "sa") + "," +
           csv_cell(s, "ra") + "," + csv_cell(s, "h_score") + "," + csv_cell(s, "measured_cost") + "," +
           csv_cell(s, "theoretical_cost") + "\n";
  }
  write_file_atomic(resolve_output_dir(base) / "sweep.csv", csv);
  return csv;
}

std::string cmd_report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out_dir,
                       const LogFn& log) {
  require(!run_dirs.empty(), ErrorCode::InvalidArgument, "report: no run directories given");
  struct Row {
    std::string run;
    json summary;
    double h;
  };
  std::vector<Row> rows;
  std::string entropy = "run,epoch,clean_mean,clean_sd,transformed_mean,transformed_sd\n";
  std::string hist = "run,selection_count,samples\n";
  for (const auto& dir : run_dirs) {
    const json s = read_json(dir / "summary.json");
    const std::string run = s.value("name", dir.filename().string());
    const double h = s.contains("h_score") ? s["h_score"].get<double>() : -1.0;
    rows.push_back({run, s, h});

    const auto ent = read_csv(dir / "entropy_per_epoch.csv");
    for (std::size_t i = 1; i < ent.size(); ++i) {
      std::string line = run;
      for (const auto& c : ent[i]) line += "," + c;
      entropy += line + "\n";
    }
    std::map<std::uint64_t, std::uint64_t> counts;
    const auto sel = read_csv(dir / "selection_bias.csv");
    for (std::size_t i = 1; i < sel.size(); ++i) {
      require(sel[i].size() == 2, ErrorCode::Io, (dir / "selection_bias.csv").string() + ": malformed row");
      ++counts[std::stoull(sel[i][1])];
    }
    for (const auto& [count, samples] : counts)
      hist += run + "," + std::to_string(count) + "," + std::to_string(samples) + "\n";
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.h > b.h; });

  std::string csv = "run,method,k,n,cost,sa,ra,h_score\n";
  std::string cost_csv = "run,cost,sa,ra,h_score\n";
  std::vector<std::vector<std::string>> table{{"run", "method", "cost", "SA", "RA", "H_score"}};
  for (const Row& r : rows) {
    const json& s = r.summary;
    const std::string cost = csv_cell(s, "theoretical_cost");
    csv += r.run + "," + s.value("method", "") + "," + csv_cell(s, "k") + "," + csv_cell(s, "n") + "," + cost + "," +
           csv_cell(s, "sa") + "," + csv_cell(s, "ra") + "," + csv_cell(s, "h_score") + "\n";
    cost_csv += r.run + "," + cost + "," + csv_cell(s, "sa") + "," + csv_cell(s, "ra") + "," + csv_cell(s, "h_score") + "\n";
    const auto pct = [&](const char* key) {
      return s.contains(key) && !s[key].is_null() ? fmt(100.0 * s[key].get<double>(), 2) : std::string("-");
    };
    table.push_back({r.run, s.value("method", ""), s.contains("theoretical_cost") ? fmt(s["theoretical_cost"].get<double>(), 1) + "N" : "-",
                     pct("sa"), pct("ra"), pct("h_score")});
  }
  std::vector<std::size_t> width(table.front().size(), 0);
  for (const auto& row : table)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  std::string text;
  for (const auto& row : table) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      const std::string pad(width[i] - row[i].size(), ' ');
      text += i == 0 ? row[i] + pad : "  " + pad + row[i];
    }
    text += "\n";
  }

  write_file_atomic(out_dir / "report.csv", csv);
  write_file_atomic(out_dir / "report.txt", text);
  write_file_atomic(out_dir / "figure_entropy.csv", entropy);
  write_file_atomic(out_dir / "figure_selection_hist.csv", hist);
  write_file_atomic(out_dir / "figure_cost_accuracy.csv", cost_csv);
  emit(log, "report written to " + out_dir.string());
  return text;
}

}  // namespace entprop
