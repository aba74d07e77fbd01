// SPDX-License-Identifier: Apache-2.0
#include "scdnet/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "scdnet/rng.hpp"

namespace scdnet {

namespace {

constexpr std::array kClassWords = {
    "dog",    "cat",      "horse",     "bird",    "cow",    "sheep",  "car",    "bus",   "truck",   "boat",
    "bike",   "train",    "chair",     "table",   "sofa",   "bed",    "lamp",   "clock", "vase",    "cup",
    "bottle", "bowl",     "plate",     "knife",   "phone",  "laptop", "book",   "bag",   "kite",    "ball",
    "tree",   "flower",   "fence",     "bench",   "sign",   "umbrella", "hat",  "shoe",  "pizza",   "cake",
    "apple",  "banana",   "bear",      "zebra",   "giraffe", "elephant", "plane", "skateboard", "surfboard", "racket",
    "oven",   "sink",     "toilet",    "window",  "door",   "mirror", "pillow", "rug",   "glove",   "bucket"};
constexpr std::array kAttributeWords = {
    "red",    "blue",   "green",   "yellow", "black",  "white",  "brown", "gray",   "orange", "pink",
    "purple", "small",  "large",   "tall",   "short",  "old",    "new",   "wooden", "metal",  "striped",
    "spotted", "shiny", "dark",    "bright", "round",  "square", "soft",  "wet",    "dry",    "empty",
    "full",   "broken", "clean",   "dirty",  "young",  "heavy",  "light", "long",   "narrow", "wide"};
constexpr std::array kRelationWords = {"above", "below",  "beside", "behind",   "near",  "under",  "holding",     "on",
                                       "facing", "touching", "left-of", "right-of", "inside", "against", "across-from", "over"};

constexpr const char* kSplits[] = {"train", "val", "test"};

Rng scene_rng(std::uint64_t seed, std::uint64_t stream, int id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(id)};
  std::array<std::uint32_t, 2> words{};
  seq.generate(words.begin(), words.end());
  return Rng((static_cast<std::uint64_t>(words[0]) << 32) | words[1]);
}

Mat embedding_table(Rng& rng, int rows, int dim) {
  Mat m(rows, dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

struct Template {
  int subject_class, relation, object_class;
};

// Fixed per-seed embedding tables for classes, attributes, roles and
// relations, plus the template list when templates are enabled.
struct FeatureTables {
  Mat classes, attributes, roles, relations;
  std::vector<Template> templates;
  FeatureTables(std::uint64_t seed, const DatasetSpec& spec) {
    Rng rng = scene_rng(seed, 1, 0);
    classes = embedding_table(rng, spec.num_classes, spec.feature_dim);
    attributes = embedding_table(rng, spec.num_attributes, spec.feature_dim);
    roles = embedding_table(rng, 3, spec.feature_dim);
    relations = embedding_table(rng, spec.num_relations, spec.feature_dim);
    Rng trng = scene_rng(seed, 3, 0);
    for (int i = 0; i < spec.scene_templates; ++i) {
      templates.push_back({static_cast<int>(trng.below(static_cast<std::uint64_t>(spec.num_classes))),
                           static_cast<int>(trng.below(static_cast<std::uint64_t>(spec.num_relations))),
                           static_cast<int>(trng.below(static_cast<std::uint64_t>(spec.num_classes)))});
    }
  }
};

ToyScene make_scene(std::uint64_t seed, int id, const DatasetSpec& spec, const Vocabulary& vocab,
                    const FeatureTables& tables) {
  Rng rng = scene_rng(seed, 2, id);
  ToyScene s;
  s.id = id;
  const int k = spec.min_objects + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_objects - spec.min_objects + 1)));
  for (int i = 0; i < k; ++i) {
    s.classes.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.num_classes))));
    s.attributes.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.num_attributes))));
  }
  s.subject = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
  s.object = static_cast<int>(rng.below(static_cast<std::uint64_t>(k - 1)));
  if (s.object >= s.subject) ++s.object;
  s.relation = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.num_relations)));
  if (!tables.templates.empty()) {
    const Template& t = tables.templates[rng.below(tables.templates.size())];
    s.classes[static_cast<std::size_t>(s.subject)] = t.subject_class;
    s.classes[static_cast<std::size_t>(s.object)] = t.object_class;
    s.relation = t.relation;
  }

  s.features.resize(k, spec.feature_dim);
  for (int i = 0; i < k; ++i) {
    const int role = i == s.subject ? 0 : (i == s.object ? 1 : 2);
    Eigen::RowVectorXd f = tables.classes.row(s.classes[static_cast<std::size_t>(i)]) +
                           tables.attributes.row(s.attributes[static_cast<std::size_t>(i)]) + tables.roles.row(role);
    if (role < 2) f += tables.relations.row(s.relation);
    for (Eigen::Index c = 0; c < f.size(); ++c) f(c) += spec.jitter * rng.normal();
    s.features.row(i) = f;
  }

  // "the" for a class seen once in the scene, "a" otherwise.
  auto canonical_article = [&](int obj) {
    const int cls = s.classes[static_cast<std::size_t>(obj)];
    return std::count(s.classes.begin(), s.classes.end(), cls) == 1 ? vocab.index("the") : vocab.index("a");
  };
  auto article = [&](int obj) {
    const int a = canonical_article(obj);
    if (rng.uniform() >= spec.article_flip) return a;
    return a == vocab.index("the") ? vocab.index("a") : vocab.index("the");
  };
  auto noun_phrase = [&](Sentence& out, int obj) {
    out.push_back(article(obj));
    out.push_back(vocab.index(kAttributeWords[static_cast<std::size_t>(s.attributes[static_cast<std::size_t>(obj)])]));
    out.push_back(vocab.index(kClassWords[static_cast<std::size_t>(s.classes[static_cast<std::size_t>(obj)])]));
  };
  const int n_caps = spec.min_captions +
                     static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_captions - spec.min_captions + 1)));
  for (int c = 0; c < n_caps; ++c) {
    Sentence cap;
    noun_phrase(cap, s.subject);
    cap.push_back(vocab.index(kRelationWords[static_cast<std::size_t>(s.relation)]));
    noun_phrase(cap, s.object);
    s.captions.push_back(std::move(cap));
  }
  return s;
}

std::string hex_row(const Mat& m) {
  std::string out;
  char buf[64];
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%a", m.data()[i]);
    if (i) out += ' ';
    out += buf;
  }
  return out;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_split(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  for (const auto& s : samples) {
    f << s.id << '\t' << s.features.rows() << '\t' << hex_row(s.features) << '\t';
    for (std::size_t c = 0; c < s.captions.size(); ++c) {
      if (c) f << ';';
      for (std::size_t k = 0; k < s.captions[c].size(); ++k) f << (k ? " " : "") << s.captions[c][k];
    }
    f << '\n';
  }
}

std::vector<Sample> read_split(const std::filesystem::path& path, int feature_dim, int vocab_size) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::vector<Sample> out;
  int line_no = 0;
  for (std::string line; std::getline(f, line);) {
    ++line_no;
    if (line.empty()) continue;
    auto fail = [&](const std::string& why) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + why);
    };
    std::vector<std::string> fields;
    std::istringstream ls(line);
    for (std::string field; std::getline(ls, field, '\t');) fields.push_back(field);
    if (fields.size() != 4) fail("expected 4 tab-separated fields");
    Sample s;
    s.id = std::stoi(fields[0]);
    const int k = std::stoi(fields[1]);
    if (k < 1) fail("scene without objects");
    s.features.resize(k, feature_dim);
    std::istringstream fs(fields[2]);
    for (Eigen::Index i = 0; i < s.features.size(); ++i) {
      std::string tok;
      if (!(fs >> tok)) fail("too few feature values");
      s.features.data()[i] = std::strtod(tok.c_str(), nullptr);
    }
    std::istringstream cs(fields[3]);
    for (std::string cap; std::getline(cs, cap, ';');) {
      Sentence sent;
      std::istringstream ts(cap);
      for (int w; ts >> w;) {
        if (w < 0 || w >= vocab_size) fail("token id out of vocabulary");
        sent.push_back(w);
      }
      if (sent.empty()) fail("empty caption");
      s.captions.push_back(std::move(sent));
    }
    if (s.captions.empty()) fail("scene without captions");
    out.push_back(std::move(s));
  }
  return out;
}

nlohmann::json spec_json(const DatasetSpec& s) {
  return {{"num_classes", s.num_classes},       {"num_attributes", s.num_attributes},
          {"num_relations", s.num_relations},   {"min_objects", s.min_objects},
          {"max_objects", s.max_objects},       {"min_captions", s.min_captions},
          {"max_captions", s.max_captions},     {"feature_dim", s.feature_dim},
          {"jitter", s.jitter},                 {"article_flip", s.article_flip},
          {"max_vocab", s.max_vocab},           {"scene_templates", s.scene_templates},
          {"val_fraction", s.val_fraction},
          {"test_fraction", s.test_fraction}};
}

}  // namespace

void DatasetSpec::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("dataset spec: " + what);
  };
  require(num_classes >= 1 && num_classes <= static_cast<int>(kClassWords.size()),
          "num_classes must be in 1.." + std::to_string(kClassWords.size()));
  require(num_attributes >= 1 && num_attributes <= static_cast<int>(kAttributeWords.size()),
          "num_attributes must be in 1.." + std::to_string(kAttributeWords.size()));
  require(num_relations >= 1 && num_relations <= static_cast<int>(kRelationWords.size()),
          "num_relations must be in 1.." + std::to_string(kRelationWords.size()));
  require(min_objects >= 2 && max_objects >= min_objects, "need 2 <= min_objects <= max_objects");
  require(min_captions >= 1 && max_captions >= min_captions, "need 1 <= min_captions <= max_captions");
  require(feature_dim >= 1, "feature_dim must be positive");
  require(scene_templates >= 0, "scene_templates must be non-negative");
  require(jitter >= 0.0, "jitter must be non-negative");
  require(article_flip >= 0.0 && article_flip <= 1.0, "article_flip must be in [0, 1]");
  require(val_fraction > 0.0 && test_fraction > 0.0 && val_fraction + test_fraction < 1.0,
          "split fractions must be positive and leave a training split");
  if (max_vocab > 0 && grammar_vocab_size() > max_vocab) {
    throw std::invalid_argument("dataset spec: grammar needs " + std::to_string(grammar_vocab_size()) +
                                " words but max_vocab is " + std::to_string(max_vocab));
  }
}

int DatasetSpec::grammar_vocab_size() const { return 4 + num_classes + num_attributes + num_relations; }

Vocabulary grammar_vocabulary(const DatasetSpec& spec) {
  Vocabulary v;
  v.add("a");
  v.add("the");
  for (int i = 0; i < spec.num_classes; ++i) v.add(kClassWords[static_cast<std::size_t>(i)]);
  for (int i = 0; i < spec.num_attributes; ++i) v.add(kAttributeWords[static_cast<std::size_t>(i)]);
  for (int i = 0; i < spec.num_relations; ++i) v.add(kRelationWords[static_cast<std::size_t>(i)]);
  return v;
}

ToyScene generate_scene(std::uint64_t seed, int id, const DatasetSpec& spec, const Vocabulary& vocab) {
  spec.validate();
  return make_scene(seed, id, spec, vocab, FeatureTables(seed, spec));
}

const std::vector<Sample>& Dataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw std::invalid_argument("unknown split '" + name + "' (expected train, val or test)");
}

int Dataset::max_caption_length() const {
  std::size_t m = 0;
  for (const auto* part : {&train, &val, &test}) {
    for (const auto& s : *part) {
      for (const auto& c : s.captions) m = std::max(m, c.size());
    }
  }
  return static_cast<int>(m);
}

Dataset generate_dataset(std::uint64_t seed, int size, const DatasetSpec& spec) {
  if (size < 64) throw std::invalid_argument("generate_dataset: size must be >= 64");
  spec.validate();
  Dataset ds;
  ds.vocab = grammar_vocabulary(spec);
  ds.spec = spec;
  ds.seed = seed;
  const FeatureTables tables(seed, spec);
  const int n_val = std::max(1, static_cast<int>(std::lround(size * spec.val_fraction)));
  const int n_test = std::max(1, static_cast<int>(std::lround(size * spec.test_fraction)));
  const int n_train = size - n_val - n_test;
  for (int id = 0; id < size; ++id) {
    ToyScene scene = make_scene(seed, id, spec, ds.vocab, tables);
    Sample s{scene.id, std::move(scene.features), std::move(scene.captions), {}};
    (id < n_train ? ds.train : (id < n_train + n_val ? ds.val : ds.test)).push_back(std::move(s));
  }
  std::vector<SentencePool::Source> sources;
  for (const auto& s : ds.train) sources.push_back({s.id, &s.features, &s.captions});
  ds.pool = SentencePool::build(sources);
  attach_retrieval(ds);
  return ds;
}

void attach_retrieval(Dataset& ds) {
  for (auto* part : {&ds.train, &ds.val, &ds.test}) {
    for (auto& s : *part) s.retrieved = ds.pool.retrieve(s.features, s.id);
  }
}

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta = {{"seed", ds.seed},
                         {"spec", spec_json(ds.spec)},
                         {"sizes", {{"train", ds.train.size()}, {"val", ds.val.size()}, {"test", ds.test.size()}}}};
  std::ofstream(dir / "dataset.json", std::ios::binary) << meta.dump(2) << '\n';
  ds.vocab.save(dir / "vocab.txt");
  ds.pool.save(dir / "pool.tsv");
  write_split(dir / "train.tsv", ds.train);
  write_split(dir / "val.tsv", ds.val);
  write_split(dir / "test.tsv", ds.test);
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  const nlohmann::json meta = nlohmann::json::parse(read_file(dir / "dataset.json"));
  ds.seed = meta.at("seed").get<std::uint64_t>();
  const auto& sj = meta.at("spec");
  DatasetSpec& sp = ds.spec;
  sp.num_classes = sj.at("num_classes");
  sp.num_attributes = sj.at("num_attributes");
  sp.num_relations = sj.at("num_relations");
  sp.min_objects = sj.at("min_objects");
  sp.max_objects = sj.at("max_objects");
  sp.min_captions = sj.at("min_captions");
  sp.max_captions = sj.at("max_captions");
  sp.feature_dim = sj.at("feature_dim");
  sp.jitter = sj.at("jitter");
  sp.article_flip = sj.at("article_flip");
  sp.max_vocab = sj.at("max_vocab");
  sp.scene_templates = sj.at("scene_templates");
  sp.val_fraction = sj.at("val_fraction");
  sp.test_fraction = sj.at("test_fraction");
  sp.validate();
  ds.vocab = Vocabulary::load(dir / "vocab.txt");
  ds.train = read_split(dir / "train.tsv", sp.feature_dim, ds.vocab.size());
  ds.val = read_split(dir / "val.tsv", sp.feature_dim, ds.vocab.size());
  ds.test = read_split(dir / "test.tsv", sp.feature_dim, ds.vocab.size());
  if (ds.train.empty()) throw std::runtime_error("dataset " + dir.string() + " has no training samples");
  ds.pool = SentencePool::load(dir / "pool.tsv");
  attach_retrieval(ds);
  return ds;
}

std::string fnv1a_hex(const std::string& bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string dataset_hash(const std::filesystem::path& dir) {
  std::string all = read_file(dir / "vocab.txt");
  for (const char* split : kSplits) all += read_file(dir / (std::string(split) + ".tsv"));
  return fnv1a_hex(all);
}

}  // namespace scdnet
