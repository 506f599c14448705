#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "leffa/io.hpp"
#include "leffa/synthdata.hpp"

// Dataset directories: PPM/PGM images, LFT1 flow/aux tensors, and a JSON-lines
// manifest (one object per sample).

namespace leffa {

inline std::string sample_stem(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%04d", index);
  return buf;
}

inline void save_sample(const SyntheticSample& s, const std::string& dir, int index,
                        std::ostream& manifest) {
  namespace fs = std::filesystem;
  const std::string stem = sample_stem(index);
  write_ppm(s.reference, dir + "/" + stem + ".ref.ppm");
  write_ppm(s.target, dir + "/" + stem + ".target.ppm");
  write_pgm(s.mask, dir + "/" + stem + ".mask.pgm");
  save_checkpoint(dir + "/" + stem + ".aux.lft", {{"aux", s.aux}});
  save_checkpoint(dir + "/" + stem + ".flow.lft", {{"gt_flow", s.gt_flow}});
  nlohmann::json line = {{"reference", stem + ".ref.ppm"},
                         {"target", stem + ".target.ppm"},
                         {"mask", stem + ".mask.pgm"},
                         {"aux", stem + ".aux.lft"},
                         {"flow", stem + ".flow.lft"},
                         {"task_kind", s.task_kind},
                         {"seed", s.seed}};
  manifest << line.dump() << "\n";
}

inline void save_dataset(const std::vector<SyntheticSample>& samples, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir + "/manifest.jsonl");
  if (!manifest) throw io_error("cannot write manifest in " + dir);
  for (size_t i = 0; i < samples.size(); ++i)
    save_sample(samples[i], dir, static_cast<int>(i), manifest);
}

inline std::vector<SyntheticSample> load_dataset(const std::string& dir) {
  std::ifstream manifest(dir + "/manifest.jsonl");
  if (!manifest) throw io_error("cannot open manifest in " + dir);
  std::vector<SyntheticSample> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception&) {
      throw io_error("malformed manifest line in " + dir);
    }
    SyntheticSample s;
    s.reference = read_pnm(dir + "/" + j.at("reference").get<std::string>());
    s.target = read_pnm(dir + "/" + j.at("target").get<std::string>());
    s.mask = read_pnm(dir + "/" + j.at("mask").get<std::string>());
    // stored mask is 8-bit; restore exact {0,1}
    for (int64_t i = 0; i < s.mask.numel(); ++i) s.mask[i] = s.mask[i] >= 0.5f ? 1.f : 0.f;
    s.aux = load_checkpoint(dir + "/" + j.at("aux").get<std::string>()).at("aux");
    s.gt_flow = load_checkpoint(dir + "/" + j.at("flow").get<std::string>()).at("gt_flow");
    s.task_kind = j.at("task_kind").get<std::string>();
    s.seed = j.at("seed").get<uint64_t>();
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace leffa
