// antic: command-line driver for data generation, training, scoring,
// evaluation and ensembling. Exit status 0 on success, 1 on a runtime
// failure, 2 on a usage error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "antic/atkd.hpp"
#include "antic/checkpoint.hpp"
#include "antic/dataset_dir.hpp"
#include "antic/evaluate.hpp"
#include "antic/scores.hpp"
#include "antic/synthetic.hpp"
#include "antic/trainer.hpp"

namespace fs = std::filesystem;
using namespace antic;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigArgs {
  std::string path;
  std::vector<std::string> sets;
};

void add_config_options(CLI::App* cmd, ConfigArgs& c) {
  cmd->add_option("--config", c.path, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.sets, "override, section.key=value (value parsed as JSON when possible)");
}

// "train.base_lr=3e-4" -> cfg["train"]["base_lr"] = 3e-4
void apply_override(Json& cfg, const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("--set expects section.key=value, got '" + s + "'");
  const std::string key = s.substr(0, eq);
  const std::string raw = s.substr(eq + 1);
  Json value = Json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  Json* node = &cfg;
  std::size_t from = 0;
  while (true) {
    const auto dot = key.find('.', from);
    const std::string part = key.substr(from, dot == std::string::npos ? std::string::npos : dot - from);
    if (part.empty()) throw UsageError("--set: empty key component in '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    if (!node->is_object()) *node = Json::object();
    from = dot + 1;
  }
}

Json load_config(const ConfigArgs& c) {
  Json cfg = Json::object();
  if (!c.path.empty()) {
    cfg = read_json_file(c.path);
    if (!cfg.is_object()) throw ConfigError("config file must hold a JSON object: " + c.path);
  }
  for (const auto& s : c.sets) apply_override(cfg, s);
  return cfg;
}

Json section(const Json& cfg, const char* name) {
  auto it = cfg.find(name);
  return it == cfg.end() ? Json::object() : *it;
}

struct RunSetup {
  DatasetBundle data;
  std::vector<Example> train;
  std::vector<Example> val;
  ModelConfig model;
  TrainConfig train_cfg;
  DistillConfig distill;
  VnrmConfig vnrm;
};

RunSetup prepare_run(const Json& cfg, const std::string& data_dir) {
  RunSetup r{load_dataset(data_dir), {}, {}, {}, {}, {}, {}};
  std::vector<std::string> warnings;
  r.train = build_examples(r.data.timelines, r.data.train, r.data.task, &warnings);
  r.val = build_examples(r.data.timelines, r.data.val, r.data.task, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  if (r.train.empty()) throw ValidationError("no usable training instances in " + data_dir);
  r.model.input_dim = static_cast<int>(r.train.front().observed.cols());
  r.model.num_verbs = r.data.task.num_verbs;
  r.model.num_nouns = r.data.task.num_nouns;
  r.model.num_actions = r.data.task.num_actions;
  from_json(section(cfg, "model"), r.model);
  from_json(section(cfg, "train"), r.train_cfg);
  from_json(section(cfg, "distill"), r.distill);
  from_json(section(cfg, "vnrm"), r.vnrm);
  r.model.validate();
  r.train_cfg.validate();
  r.distill.validate();
  return r;
}

std::vector<const Example*> pointers(const std::vector<Example>& xs) {
  std::vector<const Example*> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(&x);
  return out;
}

SoftLabelCache teacher_soft_labels(const std::vector<std::string>& teachers, const std::vector<Example>& examples,
                                   double temperature) {
  std::vector<SoftLabelMap> maps;
  std::string hashes;
  const auto ptrs = pointers(examples);
  for (const auto& path : teachers) {
    const std::string bytes = read_file_bytes(path);
    Checkpoint ck = deserialize_checkpoint(bytes);
    if (ck.variant != Variant::atkd_teacher && ck.variant != Variant::vnrm_teacher)
      throw ConfigError(path + " holds a " + variant_name(ck.variant) + " model, not a teacher");
    SoftLabelMap m;
    for (std::size_t s = 0; s < ptrs.size(); s += 256) {
      std::span<const Example* const> batch(ptrs.data() + s, std::min<std::size_t>(256, ptrs.size() - s));
      auto sets = extract_soft_labels(ck.model, batch, temperature);
      for (std::size_t i = 0; i < sets.size(); ++i) m.emplace(batch[i]->segment_id, std::move(sets[i]));
    }
    maps.push_back(std::move(m));
    if (!hashes.empty()) hashes += ',';
    hashes += fnv1a_hex(bytes);
  }
  SoftLabelCache cache;
  cache.teacher_hash = hashes;
  cache.temperature = temperature;
  cache.labels = average_soft_label_maps(maps);
  return cache;
}

int run_training(const Json& cfg, RunSetup& setup, Variant variant, const std::optional<VnrmConfig>& vnrm,
                 const SoftLabelMap* soft, const fs::path& run_dir, bool quiet) {
  fs::create_directories(run_dir);
  Json resolved = cfg;
  resolved["variant"] = variant_name(variant);
  resolved["model"] = setup.model;
  resolved["train"] = setup.train_cfg;
  resolved["distill"] = setup.distill;
  resolved["vnrm"] = vnrm ? Json(*vnrm) : Json(nullptr);
  resolved["task"] = setup.data.task;
  write_json_file(run_dir / "config.json", resolved);

  AnticipationModel model(setup.model, vnrm, setup.train_cfg.seed);
  const LossPlan plan{variant, setup.distill, soft};
  TrainResult res = train(model, setup.train, setup.val, plan, setup.train_cfg, setup.data.vocab, quiet ? nullptr : &std::cerr);

  std::ofstream log(run_dir / "metrics.csv");
  if (!log) throw IoError("cannot write " + (run_dir / "metrics.csv").string());
  log << metric_log_header() << '\n';
  for (const auto& row : res.log) log << format_metric_row(row) << '\n';

  const std::string bytes = serialize_checkpoint(res.best, variant, setup.data.task, res.steps);
  std::ofstream ck(run_dir / "model.ckpt", std::ios::binary);
  if (!ck) throw IoError("cannot write " + (run_dir / "model.ckpt").string());
  ck.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));

  Json summary{{"variant", variant_name(variant)},
               {"best_epoch", res.best_epoch},
               {"best_val_action_recall", res.best_action_recall},
               {"steps", res.steps},
               {"parameters", model.params().scalar_count()},
               {"checkpoint_hash", fnv1a_hex(bytes)}};
  write_json_file(run_dir / "summary.json", summary);
  std::cout << variant_name(variant) << ": best epoch " << res.best_epoch << ", checkpoint "
            << (run_dir / "model.ckpt").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Action anticipation: synthetic data, training, scoring, evaluation and ensembling"};
  app.require_subcommand(1);
  bool quiet = false;

  // gen-synthetic
  ConfigArgs gen_cfg;
  std::string gen_out;
  std::optional<std::uint64_t> gen_seed;
  std::optional<int> gen_videos, gen_clips;
  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic dataset directory");
  add_config_options(gen, gen_cfg);
  gen->add_option("--out", gen_out, "output dataset directory")->required();
  gen->add_option("--seed", gen_seed, "generator seed (overrides synthetic.seed)");
  gen->add_option("--videos", gen_videos, "number of videos (default 500)");
  gen->add_option("--clips", gen_clips, "clips per video (default 40)");

  // train-teacher / train-student / train-vnrm
  ConfigArgs tr_cfg;
  std::string data_dir, run_dir, kind = "atkd", topology = "student";
  std::vector<std::string> teachers;
  auto* tt = app.add_subcommand("train-teacher", "train a teacher on full sequences (observed + gap clips)");
  auto* ts = app.add_subcommand("train-student", "train an anticipation student, optionally distilled from teachers");
  auto* tv = app.add_subcommand("train-vnrm", "train a student with the verb-noun relation module");
  for (auto* cmd : {tt, ts, tv}) {
    add_config_options(cmd, tr_cfg);
    cmd->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
    cmd->add_option("--run", run_dir, "run directory for config, metric log and checkpoint")->required();
    cmd->add_flag("-q,--quiet", quiet, "no per-epoch progress on stderr");
  }
  tt->add_option("--kind", kind, "teacher architecture")->check(CLI::IsMember({"atkd", "vnrm"}));
  ts->add_option("--topology", topology, "student (future tokens) or base (predict at the last observed clip)")
      ->check(CLI::IsMember({"student", "base"}));
  for (auto* cmd : {ts, tv})
    cmd->add_option("--teacher", teachers, "teacher checkpoint; repeat to average several teachers")
        ->check(CLI::ExistingFile);

  // score
  std::string ckpt_path, split = "test", out_path, tag;
  ConfigArgs sc_cfg;
  auto* sc = app.add_subcommand("score", "run a checkpoint over a dataset split and write a score file");
  add_config_options(sc, sc_cfg);
  sc->add_option("--checkpoint", ckpt_path, "model checkpoint")->required()->check(CLI::ExistingFile);
  sc->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
  sc->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  sc->add_option("--out", out_path, "score file to write")->required();
  sc->add_option("--tag", tag, "model tag stored in the score file");

  // eval
  std::vector<std::string> score_paths;
  std::string summary_path;
  ConfigArgs ev_cfg;
  auto* ev = app.add_subcommand("eval", "class-mean top-5 recall per split and head");
  add_config_options(ev, ev_cfg);
  ev->add_option("--scores", score_paths, "score file; repeat for several models")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data_dir, "dataset directory with labels and split lists")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--summary", summary_path, "JSON summary path (default: <first score file>.eval.json)");

  // ensemble
  ConfigArgs en_cfg;
  auto* en = app.add_subcommand("ensemble", "average several score files entrywise");
  add_config_options(en, en_cfg);
  en->add_option("--scores", score_paths, "score file; repeat for each model")->required()->check(CLI::ExistingFile);
  en->add_option("--out", out_path, "averaged score file")->required();
  en->add_option("--tag", tag, "model tag of the result");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) {
      const Json cfg = load_config(gen_cfg);
      const Json syn = section(cfg, "synthetic");
      SyntheticGrammarConfig g;
      from_json(syn, g);
      if (gen_seed) g.seed = *gen_seed;
      const int n_videos = gen_videos.value_or(syn.value("n_videos", 500));
      const int clips = gen_clips.value_or(syn.value("clips_per_video", 40));
      const SyntheticDataset ds = generate_synthetic(g, n_videos, clips);
      const DatasetSplits sp = split_synthetic(ds, g);
      DatasetBundle b;
      b.task = ds.task;
      b.vocab = ds.vocab;
      for (const auto& v : ds.videos) b.timelines.emplace(v.video_id, v);
      b.train = sp.train;
      b.val = sp.val;
      b.test = sp.test;
      b.split = sp.spec;
      write_dataset(gen_out, b);
      Json used = g;
      used["n_videos"] = n_videos;
      used["clips_per_video"] = clips;
      write_json_file(fs::path(gen_out) / "synthetic.json", used);
      std::cout << "wrote " << ds.annotations.size() << " segments (" << sp.train.size() << " train, " << sp.val.size()
                << " val, " << sp.test.size() << " test) to " << gen_out << '\n';
      return 0;
    }

    if (tt->parsed() || ts->parsed() || tv->parsed()) {
      const Json cfg = load_config(tr_cfg);
      RunSetup setup = prepare_run(cfg, data_dir);
      if (tt->parsed()) {
        if (kind == "vnrm") return run_training(cfg, setup, Variant::vnrm_teacher, setup.vnrm, nullptr, run_dir, quiet);
        return run_training(cfg, setup, Variant::atkd_teacher, std::nullopt, nullptr, run_dir, quiet);
      }
      std::optional<SoftLabelCache> cache;
      if (!teachers.empty()) {
        if (ts->parsed() && topology == "base") throw UsageError("--teacher needs the student topology");
        cache = teacher_soft_labels(teachers, setup.train, setup.distill.temperature);
        fs::create_directories(run_dir);
        write_soft_label_cache((fs::path(run_dir) / "soft_labels.bin").string(), *cache);
      }
      if (ts->parsed()) {
        if (topology == "base") {
          return run_training(cfg, setup, Variant::base, std::nullopt, nullptr, run_dir, quiet);
        }
        if (!cache && setup.distill.kd_weight > 0.0)
          throw UsageError("train-student: distill.kd_weight > 0 needs --teacher (or --set distill.kd_weight=0)");
        return run_training(cfg, setup, Variant::atkd_student, std::nullopt, cache ? &cache->labels : nullptr, run_dir,
                            quiet);
      }
      VnrmConfig vc = setup.vnrm;
      vc.use_kd = cache.has_value() && setup.distill.kd_weight > 0.0;
      return run_training(cfg, setup, Variant::vnrm_student, vc, cache ? &cache->labels : nullptr, run_dir, quiet);
    }

    if (sc->parsed()) {
      load_config(sc_cfg);
      Checkpoint ck = load_checkpoint(ckpt_path);
      const DatasetBundle d = load_dataset(data_dir);
      std::vector<std::string> warnings;
      const auto examples = build_examples(d.timelines, d.rows(split), d.task, &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
      if (tag.empty()) tag = fs::path(ckpt_path).parent_path().filename().string();
      if (tag.empty()) tag = variant_name(ck.variant);
      const ScoreFile sf = predict_scores(ck.model, ck.variant, examples, tag);
      write_scores(out_path, sf);
      std::cout << "scored " << sf.records.size() << " segments -> " << out_path << '\n';
      return 0;
    }

    if (ev->parsed()) {
      load_config(ev_cfg);
      const DatasetBundle d = load_dataset(data_dir);
      const auto& rows = d.rows(split);
      std::vector<RecallReport> reports;
      Json summary = Json::array();
      for (const auto& p : score_paths) {
        const ScoreFile sf = read_scores(p);
        reports.push_back(evaluate(sf, rows, d.split, d.vocab));
        Json j = report_to_json(reports.back());
        j["scores"] = p;
        summary.push_back(std::move(j));
      }
      std::cout << format_report_table(reports);
      for (const auto& r : reports)
        for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
      if (summary_path.empty()) summary_path = score_paths.front() + ".eval.json";
      write_json_file(summary_path, summary);
      return 0;
    }

    if (en->parsed()) {
      load_config(en_cfg);
      std::vector<ScoreFile> files;
      for (const auto& p : score_paths) files.push_back(read_scores(p));
      ScoreFile out = ensemble(files);
      if (!tag.empty()) out.model_tag = tag;
      write_scores(out_path, out);
      std::cout << "ensembled " << files.size() << " files (" << out.records.size() << " segments) -> " << out_path << '\n';
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
