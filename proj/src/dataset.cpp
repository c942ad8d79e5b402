#include "cmota/dataset.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "cmota/config.hpp"
#include "cmota/image.hpp"

namespace cmota::world {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json story_to_json(const StorySample& s, const std::string& image_dir_rel) {
  json js;
  js["id"] = s.id;
  js["seed"] = s.seed;
  js["background"] = s.background;
  js["roster"] = s.roster;
  json frames = json::array();
  for (size_t t = 0; t < s.frames.size(); ++t) {
    const FrameSample& f = s.frames[t];
    json jf;
    jf["background"] = f.spec.background;
    jf["characters"] = f.spec.characters;
    jf["action"] = f.spec.action;
    jf["frame"] = f.spec.frame;
    jf["sentence"] = f.sentence;
    jf["template_id"] = f.template_id;
    jf["context_clause"] = f.context_clause;
    jf["aliased"] = f.aliased;
    jf["image"] = image_dir_rel + "/s" + std::to_string(s.id) + "_f" + std::to_string(t) + ".rimg";
    frames.push_back(std::move(jf));
  }
  js["frames"] = std::move(frames);
  return js;
}

StorySample story_from_json(const json& js, const std::string& dir) {
  StorySample s;
  s.id = js.at("id").get<int>();
  s.seed = js.at("seed").get<uint64_t>();
  s.background = js.at("background").get<int>();
  s.roster = js.at("roster").get<std::vector<int>>();
  for (const auto& jf : js.at("frames")) {
    FrameSample f;
    f.spec.background = jf.at("background").get<int>();
    f.spec.characters = jf.at("characters").get<std::vector<int>>();
    f.spec.action = jf.at("action").get<int>();
    f.spec.frame = jf.at("frame").get<int>();
    f.sentence = jf.at("sentence").get<std::string>();
    f.template_id = jf.at("template_id").get<int>();
    f.context_clause = jf.at("context_clause").get<int>();
    f.aliased = jf.at("aliased").get<bool>();
    f.image = img::read_rimg(dir + "/" + jf.at("image").get<std::string>());
    s.frames.push_back(std::move(f));
  }
  return s;
}

}  // namespace

void save_dataset(const std::string& dir, const Dataset& ds) {
  fs::create_directories(fs::path(dir) / "images");
  json index;
  index["format"] = 1;
  index["seed"] = ds.seed;
  index["world"] = {{"n_backgrounds", ds.world.n_backgrounds}, {"n_characters", ds.world.n_characters},
                    {"n_actions", ds.world.n_actions},         {"frames", ds.world.frames},
                    {"image_size", ds.world.image_size},       {"channels", ds.world.channels},
                    {"p_context", ds.world.p_context},         {"p_friends", ds.world.p_friends}};
  auto dump_split = [&](const std::vector<StorySample>& split) {
    json arr = json::array();
    for (const auto& s : split) {
      arr.push_back(story_to_json(s, "images"));
      for (size_t t = 0; t < s.frames.size(); ++t) {
        const std::string path =
            (fs::path(dir) / "images" / ("s" + std::to_string(s.id) + "_f" + std::to_string(t) + ".rimg")).string();
        const std::string tmp = path + ".tmp";
        img::write_rimg(tmp, s.frames[t].image);
        fs::rename(tmp, path);
      }
    }
    return arr;
  };
  index["splits"] = {{"train", dump_split(ds.train)}, {"val", dump_split(ds.val)}, {"test", dump_split(ds.test)}};
  io::write_text_atomic((fs::path(dir) / "index.json").string(), index.dump(2) + "\n");
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "index.json");
  if (!is) throw std::runtime_error("dataset: cannot open " + dir + "/index.json");
  json index;
  is >> index;
  Dataset ds;
  ds.seed = index.at("seed").get<uint64_t>();
  const json& w = index.at("world");
  ds.world.n_backgrounds = w.at("n_backgrounds").get<int>();
  ds.world.n_characters = w.at("n_characters").get<int>();
  ds.world.n_actions = w.at("n_actions").get<int>();
  ds.world.frames = w.at("frames").get<int>();
  ds.world.image_size = w.at("image_size").get<int>();
  ds.world.channels = w.at("channels").get<int>();
  ds.world.p_context = w.at("p_context").get<double>();
  ds.world.p_friends = w.at("p_friends").get<double>();
  for (const auto& js : index.at("splits").at("train")) ds.train.push_back(story_from_json(js, dir));
  for (const auto& js : index.at("splits").at("val")) ds.val.push_back(story_from_json(js, dir));
  for (const auto& js : index.at("splits").at("test")) ds.test.push_back(story_from_json(js, dir));
  return ds;
}

}  // namespace cmota::world
