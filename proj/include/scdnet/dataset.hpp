// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scdnet/bitcodec.hpp"
#include "scdnet/retrieval.hpp"

namespace scdnet {

/// Grammar and feature settings of the synthetic scene generator.
struct DatasetSpec {
  int num_classes = 40;
  int num_attributes = 20;
  int num_relations = 12;
  int min_objects = 2;  // K range per scene
  int max_objects = 4;
  int min_captions = 2;
  int max_captions = 5;
  int feature_dim = 32;      // D_v
  double jitter = 0.05;      // per-coordinate Gaussian noise on object features
  double article_flip = 0.1; // chance an article deviates from the canonical one
  int max_vocab = 0;         // cap on W, 0 for none
  int scene_templates = 0;   // distinct (subject, relation, object) class triples, 0 for unrestricted
  double val_fraction = 0.1;
  double test_fraction = 0.1;

  void validate() const;
  /// W implied by the grammar: PAD, UNK, "a", "the" plus every content word.
  int grammar_vocab_size() const;
};

/// One generated scene. Object `subject` stands in relation `relation` to
/// object `object`; the rest are distractors.
struct ToyScene {
  int id = 0;
  std::vector<int> classes;
  std::vector<int> attributes;
  int subject = 0;
  int object = 1;
  int relation = 0;
  Mat features;  // K x D_v
  std::vector<Sentence> captions;
};

struct Sample {
  int id = 0;
  Mat features;                   // K x D_v
  std::vector<Sentence> captions; // unpadded token ids
  Sentence retrieved;             // nearest training caption, another scene's
};

struct Dataset {
  Vocabulary vocab;
  DatasetSpec spec;
  std::uint64_t seed = 0;
  std::vector<Sample> train, val, test;
  SentencePool pool;

  const std::vector<Sample>& split(const std::string& name) const;
  int max_caption_length() const;
};

/// Builds the grammar vocabulary: "a", "the", then classes, attributes and
/// relations in that order.
Vocabulary grammar_vocabulary(const DatasetSpec& spec);

/// Scene `id` depends only on (seed, id).
ToyScene generate_scene(std::uint64_t seed, int id, const DatasetSpec& spec, const Vocabulary& vocab);

/// `size` scenes split by id into train/val/test, with the retrieval
/// pool built over the training captions.
Dataset generate_dataset(std::uint64_t seed, int size, const DatasetSpec& spec);

/// Assigns each sample its retrieved sentence (training samples never see
/// their own captions).
void attach_retrieval(Dataset& ds);

/// Directory layout: dataset.json, vocab.txt, pool.tsv and one
/// <split>.tsv per split with lines "id<TAB>K<TAB>hex features<TAB>captions",
/// captions separated by ';' and tokens by spaces.
void write_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& dir);

/// FNV-1a over the split files and the vocabulary, as 16 hex digits.
std::string dataset_hash(const std::filesystem::path& dir);
std::string fnv1a_hex(const std::string& bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace scdnet
