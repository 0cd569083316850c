#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcsr/core/random.hpp"
#include "mcsr/io/image.hpp"
#include "mcsr/io/phantom.hpp"

namespace mcsr {

/// root/subjects/<id>/{reference,target}.img(.json) plus train.txt/test.txt.
struct DatasetLayout {
  std::filesystem::path root;
  std::vector<std::string> train;
  std::vector<std::string> test;

  std::filesystem::path subject_dir(const std::string& id) const { return root / "subjects" / id; }
  std::filesystem::path image_path(const std::string& id, Modality m) const {
    return subject_dir(id) / (to_string(m) + ".img");
  }
  ImageGrid load(const std::string& id, Modality m) const { return load_image(image_path(id, m)); }
};

struct CorpusOptions {
  PhantomSpec base;  // the seed field is replaced per subject
  std::uint64_t master_seed = 0;
  std::size_t n_train = 32;
  std::size_t n_test = 20;
  bool overwrite = false;
};

inline std::string subject_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sub-%04zu", index);
  return buf;
}

namespace detail {

inline void write_manifest(const std::filesystem::path& path, const std::vector<std::string>& ids) {
  std::string text;
  for (const auto& id : ids) text += id + "\n";
  write_text_atomic(path, text);
}

inline std::vector<std::string> read_manifest(const std::filesystem::path& path) {
  std::istringstream is(read_text(path));
  std::vector<std::string> ids;
  for (std::string line; std::getline(is, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

}  // namespace detail

/// Generates n_train + n_test phantom subjects with seeds derived from the
/// master seed (subject index i uses derive_seed(master, i)).
inline DatasetLayout build_corpus(const CorpusOptions& opts, const std::filesystem::path& out_dir) {
  if (opts.n_train < 1 || opts.n_test < 1) throw std::invalid_argument("corpus: n_train and n_test must be >= 1");
  validate(opts.base);
  namespace fs = std::filesystem;
  if (fs::exists(out_dir) && !fs::is_empty(out_dir)) {
    if (!opts.overwrite) throw IoError("corpus: " + out_dir.string() + " exists (pass overwrite to replace it)");
    fs::remove_all(out_dir);
  }
  DatasetLayout layout;
  layout.root = out_dir;
  const std::size_t total = opts.n_train + opts.n_test;
  for (std::size_t i = 0; i < total; ++i) {
    const auto id = subject_id(i);
    PhantomSpec spec = opts.base;
    spec.seed = derive_seed(opts.master_seed, i);
    auto [ref, tgt] = generate_phantom_pair(spec);
    ref.subject_id = tgt.subject_id = id;
    fs::create_directories(layout.subject_dir(id));
    save_image(ref, layout.image_path(id, Modality::reference));
    save_image(tgt, layout.image_path(id, Modality::target));
    (i < opts.n_train ? layout.train : layout.test).push_back(id);
  }
  detail::write_manifest(out_dir / "train.txt", layout.train);
  detail::write_manifest(out_dir / "test.txt", layout.test);
  nlohmann::json meta = {{"master_seed", opts.master_seed},
                         {"n_train", opts.n_train},
                         {"n_test", opts.n_test},
                         {"phantom", opts.base}};
  write_text_atomic(out_dir / "corpus.json", meta.dump(2) + "\n");
  return layout;
}

/// Reads manifests and checks that every listed subject has both modalities.
inline DatasetLayout open_corpus(const std::filesystem::path& root) {
  DatasetLayout layout;
  layout.root = root;
  layout.train = detail::read_manifest(root / "train.txt");
  layout.test = detail::read_manifest(root / "test.txt");
  for (const auto* ids : {&layout.train, &layout.test}) {
    for (const auto& id : *ids) {
      for (auto m : {Modality::reference, Modality::target}) {
        const auto p = layout.image_path(id, m);
        if (!std::filesystem::exists(p) || !std::filesystem::exists(sidecar_path(p))) {
          throw IoError("corpus: subject " + id + " is missing " + to_string(m));
        }
      }
    }
  }
  return layout;
}

}  // namespace mcsr
