// cmota: dataset generation, codebook fitting, training, evaluation,
// sampling, ablation batteries and memory inspection for the story
// visualization model.
//
// Exit codes: 0 ok, 1 usage/config error, 2 missing artifact, 3 numerical
// failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>

#include "cmota/checkpoint.hpp"
#include "cmota/dataset.hpp"
#include "cmota/diag.hpp"
#include "cmota/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cmota;
using nlohmann::json;

namespace {

struct MissingArtifact : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonOpts {
  std::string config_path;
  std::string out = "out";
  std::string preset = "desk";
  uint64_t seed = 0;
  bool seed_set = false;
  bool preset_set = false;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "JSON config file")->envname("CMOTA_CONFIG");
  cmd->add_option("--out", o.out, "output directory")->envname("CMOTA_OUT");
  cmd->add_option("--preset", o.preset, "base preset: desk or paper")
      ->envname("CMOTA_PRESET")
      ->check(CLI::IsMember({"desk", "paper"}))
      ->trigger_on_parse();
  cmd->add_option("--seed", o.seed, "run seed")->envname("CMOTA_SEED");
  cmd->add_flag("--force", o.force, "override config-hash mismatch checks")->envname("CMOTA_FORCE");
  cmd->callback([cmd, &o] {
    o.seed_set = cmd->count("--seed") > 0;
    o.preset_set = cmd->count("--preset") > 0;
  });
}

io::RunConfig resolve_base_config(const CommonOpts& o) {
  json overrides = json::object();
  if (!o.config_path.empty()) {
    std::ifstream is(o.config_path);
    if (!is) throw MissingArtifact("config file not found: " + o.config_path);
    is >> overrides;
  }
  std::string preset = o.preset_set ? o.preset : overrides.value("preset", o.preset);
  io::RunConfig cfg = io::merge_config(io::preset_config(preset), overrides);
  if (o.seed_set) {
    cfg.seed = o.seed;
    cfg.train.seed = o.seed;
  }
  return cfg;
}

world::Dataset load_dataset_or_die(const std::string& data_dir) {
  if (!fs::exists(fs::path(data_dir) / "index.json"))
    throw MissingArtifact("no dataset at '" + data_dir + "' (run `cmota gen-data --out ...` first)");
  return world::load_dataset(data_dir);
}

tok::Codebook load_codebook_or_die(const std::string& path) {
  if (!fs::exists(path))
    throw MissingArtifact("no codebook at '" + path + "' (run `cmota fit-codebook --out ...` first)");
  io::Container c = io::read_container(path);
  const io::TensorRecord* r = c.find("codebook.entries");
  if (!r) throw MissingArtifact("'" + path + "' holds no codebook entries");
  json extra = json::parse(c.extra_json);
  std::vector<double> flat = io::detail::record_values<double>(*r);
  const int k = static_cast<int>(r->dims[0]);
  const int dim = static_cast<int>(r->dims[1]);
  std::vector<std::vector<double>> entries;
  for (int i = 0; i < k; ++i)
    entries.emplace_back(flat.begin() + static_cast<int64_t>(i) * dim,
                         flat.begin() + static_cast<int64_t>(i + 1) * dim);
  return tok::Codebook::from_parts(extra.at("codebook").at("patch").get<int>(),
                                   extra.at("codebook").at("channels").get<int>(), std::move(entries));
}

void append_line(const std::string& path, const std::string& line) {
  std::ofstream os(path, std::ios::app);
  os << line << "\n";
}

// ---------------------------------------------------------------------------
// gen-data / fit-codebook
// ---------------------------------------------------------------------------

int cmd_gen_data(const CommonOpts& o) {
  io::RunConfig cfg = resolve_base_config(o);
  world::Dataset ds = world::make_splits(cfg.dataset_train, cfg.dataset_val, cfg.dataset_test, cfg.seed, cfg.world);
  fs::create_directories(o.out);
  world::save_dataset((fs::path(o.out) / "dataset").string(), ds);
  io::write_text_atomic((fs::path(o.out) / "config.json").string(), io::to_json(cfg).dump(2) + "\n");
  std::cout << "dataset: " << ds.train.size() << " train / " << ds.val.size() << " val / " << ds.test.size()
            << " test stories -> " << o.out << "/dataset (config hash " << io::config_hash(cfg) << ")\n";
  return 0;
}

int cmd_fit_codebook(const CommonOpts& o) {
  io::RunConfig cfg = resolve_base_config(o);
  tok::Codebook cb = pipeline::fit_world_codebook(cfg);
  fs::create_directories(o.out);
  io::Container c;
  c.config_json = io::to_json(cfg).dump();
  json extra;
  extra["config_hash"] = io::config_hash(cfg);
  extra["codebook"] = {{"patch", cb.patch_size()}, {"channels", cb.channels()}};
  c.extra_json = extra.dump();
  std::vector<double> flat;
  for (const auto& e : cb.entries()) flat.insert(flat.end(), e.begin(), e.end());
  c.records.push_back(io::detail::make_record<double>("codebook.entries", {cb.size(), cb.entry_dim()}, flat));
  io::write_container((fs::path(o.out) / "codebook.ckpt").string(), c);
  io::write_text_atomic((fs::path(o.out) / "codebook.json").string(), cb.to_json() + "\n");
  std::cout << "codebook: K=" << cb.size() << " patch=" << cb.patch_size() << " -> " << o.out
            << "/codebook.ckpt\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOpts {
  std::string data;
  std::string codebook;
  std::string resume;
};

template <typename T>
int run_train(io::RunConfig cfg, const CommonOpts& o, const TrainOpts& t) {
  const std::string data_dir = t.data.empty() ? (fs::path(o.out) / "dataset").string() : t.data;
  const std::string cb_path = t.codebook.empty() ? (fs::path(o.out) / "codebook.ckpt").string() : t.codebook;
  world::Dataset ds = load_dataset_or_die(data_dir);
  tok::Codebook codebook = load_codebook_or_die(cb_path);
  tok::Vocab vocab = pipeline::build_world_vocab(ds.world);
  cfg.world = ds.world;
  cfg.model.frames = ds.world.frames;
  io::RunConfig resolved = pipeline::resolve(cfg, vocab, codebook);
  const std::string run_hash = io::config_hash(resolved);

  model::Transformer<T> m(resolved.model, seed_for(resolved.seed, 0x0DE1));
  train::Trainer<T> trainer(m, resolved.train);
  if (!t.resume.empty()) {
    io::RunConfig ck_cfg = io::read_checkpoint_config(t.resume);
    if (io::config_hash(ck_cfg) != run_hash && !o.force)
      throw io::ConfigError("checkpoint config hash " + io::config_hash(ck_cfg) +
                            " does not match requested config " + run_hash + " (use --force to override)");
    io::load_checkpoint(t.resume, m, &trainer);
    std::cout << "resumed from " << t.resume << " at epoch " << trainer.epoch() << " step "
              << trainer.global_step() << "\n";
  }

  fs::create_directories(fs::path(o.out) / "checkpoints");
  io::write_text_atomic((fs::path(o.out) / "config.json").string(), io::to_json(resolved).dump(2) + "\n");
  const std::string metrics_path = (fs::path(o.out) / "metrics.jsonl").string();
  const std::string latest = (fs::path(o.out) / "checkpoints" / "latest.ckpt").string();

  int last_saved_epoch = trainer.epoch();
  auto sink = [&](const train::StepRecord& r) {
    json rec = {{"step", r.step},
                {"epoch", r.epoch},
                {"loss_t2i", r.loss.t2i},
                {"loss_i2t", r.loss.i2t},
                {"loss_pt2i", r.loss.pt2i},
                {"loss_total", r.loss.total},
                {"lr", r.lr},
                {"tokens_per_s", r.tokens_per_s}};
    append_line(metrics_path, rec.dump());
    if (r.epoch != last_saved_epoch) {
      last_saved_epoch = r.epoch;
      io::save_checkpoint(latest, resolved, m, &trainer, vocab, codebook);
      std::cout << "epoch " << r.epoch << "/" << resolved.train.epochs << "  loss " << std::fixed
                << std::setprecision(4) << r.loss.total << "\n";
    }
  };

  std::vector<train::EncodedStory> data =
      train::encode_stories(ds.train, vocab, codebook, resolved.model.t_text);
  try {
    trainer.run(data, sink);
  } catch (const nn::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\nlast good checkpoint: " << latest << "\n";
    throw;
  }
  io::save_checkpoint((fs::path(o.out) / "checkpoints" / "final.ckpt").string(), resolved, m, &trainer, vocab,
                      codebook);
  const double acc = train::teacher_forced_image_accuracy(m, data);
  std::cout << "done: " << trainer.global_step() << " steps, teacher-forced image accuracy "
            << std::setprecision(4) << acc << "\nfinal checkpoint: " << o.out << "/checkpoints/final.ckpt\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval / sample / inspect-memory
// ---------------------------------------------------------------------------

struct EvalOpts {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
};

const std::vector<world::StorySample>& pick_split(const world::Dataset& ds, const std::string& split) {
  if (split == "train") return ds.train;
  if (split == "val") return ds.val;
  if (split == "test") return ds.test;
  throw io::ConfigError("unknown split '" + split + "'");
}

template <typename T>
int run_eval(const io::RunConfig& ck_cfg, const CommonOpts& o, const EvalOpts& e) {
  world::Dataset ds = load_dataset_or_die(e.data.empty() ? (fs::path(o.out) / "dataset").string() : e.data);
  model::Transformer<T> m(ck_cfg.model, 1);
  io::LoadedCheckpoint lc = io::load_checkpoint(e.checkpoint, m, static_cast<train::Trainer<T>*>(nullptr));
  const auto& stories = pick_split(ds, e.split);
  if (stories.empty()) throw MissingArtifact("split '" + e.split + "' is empty");
  metrics::MetricReport rep = pipeline::evaluate_model(m, stories, lc.vocab, lc.codebook, ds.world, true);
  rep.config_hash = io::config_hash(ck_cfg);

  fs::create_directories(o.out);
  io::write_text_atomic((fs::path(o.out) / "report.json").string(), metrics::report_to_json(rep) + "\n");
  append_line((fs::path(o.out) / "results.jsonl").string(), metrics::report_to_json(rep));
  {
    std::ostringstream tsv;
    tsv << "character\tf1\n";
    for (size_t c = 0; c < rep.per_character_f1.size(); ++c)
      tsv << world::character_names()[c] << "\t" << rep.per_character_f1[c] << "\n";
    io::write_text_atomic((fs::path(o.out) / "f1_per_character.tsv").string(), tsv.str());
  }
  std::cout << "split " << e.split << " (" << rep.n_samples << " stories)\n"
            << "  char_f1        " << rep.char_f1 << "\n  frame_acc      " << rep.frame_acc
            << "\n  bleu2/bleu3    " << rep.bleu2 << " / " << rep.bleu3 << "\n  patch_fd       "
            << rep.patch_fd << "\n  bg_consistency " << rep.bg_consistency << "\n";
  return 0;
}

struct SampleOpts {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  int story = 0;
  std::string sentences_file;
};

template <typename T>
int run_sample(const io::RunConfig& ck_cfg, const CommonOpts& o, const SampleOpts& s) {
  model::Transformer<T> m(ck_cfg.model, 1);
  io::LoadedCheckpoint lc = io::load_checkpoint(s.checkpoint, m, static_cast<train::Trainer<T>*>(nullptr));

  train::EncodedStory story;
  std::vector<std::string> sentences;
  bool have_gt_images = false;
  if (!s.sentences_file.empty()) {
    std::ifstream is(s.sentences_file);
    if (!is) throw MissingArtifact("sentences file not found: " + s.sentences_file);
    std::string line;
    while (std::getline(is, line))
      if (!tok::Vocab::normalize(line).empty()) sentences.push_back(line);
    if (sentences.empty()) throw io::ConfigError("sentences file is empty");
    for (const auto& sent : sentences) {
      train::EncodedFrame f;
      f.text = lc.vocab.encode(sent, ck_cfg.model.t_text);
      story.frames.push_back(std::move(f));
    }
  } else {
    world::Dataset ds = load_dataset_or_die(s.data.empty() ? (fs::path(o.out) / "dataset").string() : s.data);
    const auto& stories = pick_split(ds, s.split);
    if (s.story < 0 || s.story >= static_cast<int>(stories.size()))
      throw io::ConfigError("story index out of range (split has " + std::to_string(stories.size()) + ")");
    const world::StorySample& gt = stories[static_cast<size_t>(s.story)];
    for (const auto& f : gt.frames) sentences.push_back(f.sentence);
    story = train::encode_stories({gt}, lc.vocab, lc.codebook, ck_cfg.model.t_text)[0];
    have_gt_images = true;
  }

  // With no ground-truth images, caption the generated frames instead.
  train::StoryGeneration gen = train::generate_story(m, story, have_gt_images);
  fs::path dir = fs::path(o.out) / "samples";
  fs::create_directories(dir);
  std::ostringstream captions;
  for (size_t t = 0; t < gen.images.size(); ++t) {
    img::ImageF64 im = lc.codebook.dequantize(gen.images[t], ck_cfg.world.image_size, ck_cfg.world.image_size);
    img::ImageU8 u8 = im.to_u8();
    img::write_rimg((dir / ("frame" + std::to_string(t) + ".rimg")).string(), u8);
    img::write_png((dir / ("frame" + std::to_string(t) + ".png")).string(), u8);
    std::string caption;
    if (have_gt_images) {
      caption = lc.vocab.decode(gen.captions[t]);
    } else {
      train::EncodedFrame gf;
      gf.image = gen.images[t];
      train::EncodedStory gs;
      gs.frames.push_back(gf);
      caption = lc.vocab.decode(train::make_pseudo_texts(m, gs)[0]);
    }
    captions << "frame " << t << "\n  sentence:    " << sentences[t] << "\n  pseudo-text: " << caption << "\n";
  }
  io::write_text_atomic((dir / "captions.txt").string(), captions.str());
  std::cout << "wrote " << gen.images.size() << " frames to " << dir.string() << "\n";
  return 0;
}

template <typename T>
int run_inspect(const io::RunConfig& ck_cfg, const CommonOpts& o, const SampleOpts& s) {
  model::Transformer<T> m(ck_cfg.model, 1);
  io::LoadedCheckpoint lc = io::load_checkpoint(s.checkpoint, m, static_cast<train::Trainer<T>*>(nullptr));
  world::Dataset ds = load_dataset_or_die(s.data.empty() ? (fs::path(o.out) / "dataset").string() : s.data);
  const auto& stories = pick_split(ds, s.split);
  if (s.story < 0 || s.story >= static_cast<int>(stories.size()))
    throw io::ConfigError("story index out of range");
  train::EncodedStory story =
      train::encode_stories({stories[static_cast<size_t>(s.story)]}, lc.vocab, lc.codebook, ck_cfg.model.t_text)[0];

  model::MemoryInspection inspect;
  train::generate_story(m, story, false, &inspect);
  fs::create_directories(o.out);
  const std::string path = (fs::path(o.out) / "memory_dump.jsonl").string();
  std::ofstream os(path, std::ios::trunc);
  for (const auto& rec : inspect.records) {
    for (int h = 0; h < rec.attn.heads; ++h)
      for (int q = 0; q < rec.attn.t_q; ++q)
        for (int k = 0; k < rec.attn.t_k; ++k) {
          json line = {{"frame", rec.frame}, {"layer", rec.layer}, {"op", rec.op},
                       {"head", h},          {"query", q},         {"key", k},
                       {"weight", rec.attn.get(h, q, k)}};
          os << line.dump() << "\n";
        }
  }
  std::cout << "wrote " << inspect.records.size() << " attention records to " << path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblateOpts {
  std::string arm;
  int seeds = 1;
};

template <typename T>
int run_ablate(const io::RunConfig& base, const CommonOpts& o, const AblateOpts& a) {
  std::vector<pipeline::ArmSpec> arms;
  if (!a.arm.empty()) {
    auto found = pipeline::find_arm(a.arm);
    if (!found) throw io::ConfigError("unknown arm '" + a.arm + "'");
    if (!found->captioner_arm.empty()) arms.push_back(*pipeline::find_arm(found->captioner_arm));
    arms.push_back(*found);
  } else {
    arms = pipeline::standard_arms();
  }

  std::map<std::string, std::vector<pipeline::ArmResult>> results;  // arm -> per-seed
  for (int s = 0; s < a.seeds; ++s) {
    io::RunConfig cfg = base;
    cfg.seed = base.seed + static_cast<uint64_t>(s);
    cfg.train.seed = cfg.seed;
    world::Dataset ds =
        world::make_splits(cfg.dataset_train, cfg.dataset_val, cfg.dataset_test, cfg.seed, cfg.world);
    tok::Vocab vocab = pipeline::build_world_vocab(cfg.world);
    tok::Codebook cb = pipeline::fit_world_codebook(cfg);
    io::RunConfig resolved = pipeline::resolve(cfg, vocab, cb);

    std::map<std::string, model::Transformer<T>> captioners;
    for (const auto& arm : arms) {
      const model::Transformer<T>* captioner = nullptr;
      if (!arm.captioner_arm.empty()) {
        auto it = captioners.find(arm.captioner_arm);
        if (it == captioners.end())
          throw io::ConfigError("arm '" + arm.name + "' needs arm '" + arm.captioner_arm + "' trained first");
        captioner = &it->second;
      }
      model::Transformer<T> kept(resolved.model, 1);
      pipeline::ArmResult res = pipeline::run_arm<T>(resolved, arm, ds, vocab, cb, captioner, &kept);
      std::cout << "seed " << cfg.seed << " arm " << std::left << std::setw(10) << arm.name << " char_f1 "
                << std::fixed << std::setprecision(3) << res.test_report.char_f1 << " frame_acc "
                << res.test_report.frame_acc << " bg " << res.test_report.bg_consistency << "\n";
      captioners.erase(arm.name);
      captioners.emplace(arm.name, std::move(kept));
      results[arm.name].push_back(std::move(res));
    }
  }

  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n == 0 ? 0.0 : (n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]));
  };

  std::ostringstream table, tsv;
  table << std::left << std::setw(11) << "arm" << std::right << std::setw(10) << "params" << std::setw(9)
        << "char_f1" << std::setw(10) << "frm_acc" << std::setw(8) << "bleu2" << std::setw(8) << "bleu3"
        << std::setw(10) << "patch_fd" << std::setw(8) << "bg" << "\n";
  tsv << "arm\tparams\tchar_f1\tframe_acc\tbleu2\tbleu3\tpatch_fd\tbg_consistency\n";
  json jout = json::array();
  for (const auto& arm : arms) {
    const auto& rs = results[arm.name];
    if (rs.empty()) continue;
    auto col = [&](auto getter) {
      std::vector<double> v;
      for (const auto& r : rs) v.push_back(getter(r));
      return median(v);
    };
    const double f1 = col([](const auto& r) { return r.test_report.char_f1; });
    const double fa = col([](const auto& r) { return r.test_report.frame_acc; });
    const double b2 = col([](const auto& r) { return r.test_report.bleu2; });
    const double b3 = col([](const auto& r) { return r.test_report.bleu3; });
    const double fd = col([](const auto& r) { return r.test_report.patch_fd; });
    const double bg = col([](const auto& r) { return r.test_report.bg_consistency; });
    table << std::left << std::setw(11) << arm.name << std::right << std::setw(10) << rs[0].trainable_params
          << std::fixed << std::setprecision(3) << std::setw(9) << f1 << std::setw(10) << fa << std::setw(8)
          << b2 << std::setw(8) << b3 << std::setw(10) << std::setprecision(4) << fd << std::setw(8)
          << std::setprecision(3) << bg << "\n";
    tsv << arm.name << "\t" << rs[0].trainable_params << "\t" << f1 << "\t" << fa << "\t" << b2 << "\t" << b3
        << "\t" << fd << "\t" << bg << "\n";
    json ja = {{"arm", arm.name},       {"params", rs[0].trainable_params},
               {"char_f1", f1},         {"frame_acc", fa},
               {"bleu2", b2},           {"bleu3", b3},
               {"patch_fd", fd},        {"bg_consistency", bg},
               {"seeds", json::array()}};
    for (const auto& r : rs) ja["seeds"].push_back(json::parse(metrics::report_to_json(r.test_report)));
    jout.push_back(std::move(ja));
  }
  std::cout << "\n" << table.str();
  fs::create_directories(o.out);
  io::write_text_atomic((fs::path(o.out) / "ablate.tsv").string(), tsv.str());
  io::write_text_atomic((fs::path(o.out) / "ablate.json").string(), jout.dump(2) + "\n");
  std::cout << "\ntables written to " << o.out << "/ablate.{tsv,json}\n";
  return 0;
}

template <typename F>
int dispatch_precision(const io::RunConfig& cfg, F&& f) {
  if (cfg.precision == "f64") return f(static_cast<double*>(nullptr));
  return f(static_cast<float*>(nullptr));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"story visualization with context memory and online text augmentation"};
  app.require_subcommand(1);

  CommonOpts gen_o, fit_o, train_o, eval_o, sample_o, inspect_o, ablate_o;
  TrainOpts train_t;
  EvalOpts eval_e;
  SampleOpts sample_s, inspect_s;
  AblateOpts ablate_a;

  add_common(app.add_subcommand("gen-data", "generate the synthetic story dataset"), gen_o);
  add_common(app.add_subcommand("fit-codebook", "fit the patch codebook"), fit_o);

  CLI::App* ctrain = app.add_subcommand("train", "train a model");
  add_common(ctrain, train_o);
  ctrain->add_option("--data", train_t.data, "dataset directory (default <out>/dataset)")->envname("CMOTA_DATA");
  ctrain->add_option("--codebook", train_t.codebook, "codebook artifact (default <out>/codebook.ckpt)");
  ctrain->add_option("--resume", train_t.resume, "checkpoint to resume from");

  CLI::App* ceval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ceval, eval_o);
  ceval->add_option("--checkpoint", eval_e.checkpoint, "model checkpoint")->envname("CMOTA_CHECKPOINT");
  ceval->add_option("--data", eval_e.data, "dataset directory")->envname("CMOTA_DATA");
  ceval->add_option("--split", eval_e.split, "train|val|test")->check(CLI::IsMember({"train", "val", "test"}));

  CLI::App* csample = app.add_subcommand("sample", "generate images (and pseudo-texts) for sentences");
  add_common(csample, sample_o);
  csample->add_option("--checkpoint", sample_s.checkpoint, "model checkpoint")->envname("CMOTA_CHECKPOINT");
  csample->add_option("--data", sample_s.data, "dataset directory")->envname("CMOTA_DATA");
  csample->add_option("--split", sample_s.split, "train|val|test")->check(CLI::IsMember({"train", "val", "test"}));
  csample->add_option("--story", sample_s.story, "story index within the split");
  csample->add_option("--sentences", sample_s.sentences_file, "file with one sentence per line");

  CLI::App* cinspect = app.add_subcommand("inspect-memory", "dump memory attention weights for a story");
  add_common(cinspect, inspect_o);
  cinspect->add_option("--checkpoint", inspect_s.checkpoint, "model checkpoint")->envname("CMOTA_CHECKPOINT");
  cinspect->add_option("--data", inspect_s.data, "dataset directory")->envname("CMOTA_DATA");
  cinspect->add_option("--split", inspect_s.split, "train|val|test")->check(CLI::IsMember({"train", "val", "test"}));
  cinspect->add_option("--story", inspect_s.story, "story index within the split");

  CLI::App* cablate = app.add_subcommand("ablate", "run the component ablation battery");
  add_common(cablate, ablate_o);
  cablate->add_option("--arm", ablate_a.arm, "run a single named arm (tr|pma|awm|bi|online|all_level|offline)")
      ->envname("CMOTA_ARM");
  cablate->add_option("--seeds", ablate_a.seeds, "number of shared seeds per arm")->envname("CMOTA_SEEDS");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand("gen-data")) return cmd_gen_data(gen_o);
    if (app.got_subcommand("fit-codebook")) return cmd_fit_codebook(fit_o);
    if (app.got_subcommand("train")) {
      io::RunConfig cfg = resolve_base_config(train_o);
      return dispatch_precision(cfg, [&](auto* tag) {
        using T = std::remove_pointer_t<decltype(tag)>;
        return run_train<T>(cfg, train_o, train_t);
      });
    }
    auto checkpointed = [&](const CommonOpts& o, std::string& ckpt_path) -> io::RunConfig {
      if (ckpt_path.empty()) ckpt_path = (fs::path(o.out) / "checkpoints" / "final.ckpt").string();
      if (!fs::exists(ckpt_path))
        throw MissingArtifact("no checkpoint at '" + ckpt_path + "' (run `cmota train` first)");
      io::RunConfig ck_cfg = io::read_checkpoint_config(ckpt_path);
      if (!o.config_path.empty()) {
        io::RunConfig requested = resolve_base_config(o);
        requested.train.seed = requested.seed;
        requested.model.vocab_text = ck_cfg.model.vocab_text;
        requested.model.codebook = ck_cfg.model.codebook;
        if (io::config_hash(requested) != io::config_hash(ck_cfg) && !o.force)
          throw io::ConfigError("checkpoint config hash does not match --config (use --force to override)");
      }
      return ck_cfg;
    };
    if (app.got_subcommand("eval")) {
      io::RunConfig cfg = checkpointed(eval_o, eval_e.checkpoint);
      return dispatch_precision(cfg, [&](auto* tag) {
        using T = std::remove_pointer_t<decltype(tag)>;
        return run_eval<T>(cfg, eval_o, eval_e);
      });
    }
    if (app.got_subcommand("sample")) {
      io::RunConfig cfg = checkpointed(sample_o, sample_s.checkpoint);
      return dispatch_precision(cfg, [&](auto* tag) {
        using T = std::remove_pointer_t<decltype(tag)>;
        return run_sample<T>(cfg, sample_o, sample_s);
      });
    }
    if (app.got_subcommand("inspect-memory")) {
      io::RunConfig cfg = checkpointed(inspect_o, inspect_s.checkpoint);
      return dispatch_precision(cfg, [&](auto* tag) {
        using T = std::remove_pointer_t<decltype(tag)>;
        return run_inspect<T>(cfg, inspect_o, inspect_s);
      });
    }
    if (app.got_subcommand("ablate")) {
      io::RunConfig cfg = resolve_base_config(ablate_o);
      return dispatch_precision(cfg, [&](auto* tag) {
        using T = std::remove_pointer_t<decltype(tag)>;
        return run_ablate<T>(cfg, ablate_o, ablate_a);
      });
    }
  } catch (const MissingArtifact& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const nn::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const io::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
