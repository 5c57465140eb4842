#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "aifn/errors.hpp"
#include "aifn/layers.hpp"
#include "aifn/rng.hpp"

namespace aifn {

// Thread labels across the project: 0 = true news, 1 = false news.
constexpr int kLabelTrue = 0;
constexpr int kLabelFalse = 1;

struct Comment {
    std::string text;
    double ts = 0.0;
};

struct Thread {
    std::string id;
    std::string post;
    std::vector<Comment> comments;
    int label = kLabelTrue;
};

struct ParseResult {
    std::vector<Thread> threads;
    std::size_t dropped_unverified = 0;
};

// Reads a JSON-lines corpus: one object per line with fields id (string),
// post (non-empty string), comments (array of {text, ts}), label (one of
// "true", "false", "unverified"). Unverified lines are dropped and counted.
// Malformed lines, missing fields, and duplicate ids raise a format error
// naming the line number.
ParseResult parse_corpus(const std::string& path);

// One compact JSON object per line, the inverse of parse_corpus.
void write_corpus(const std::string& path, const std::vector<Thread>& threads);

// Lowercased tokens split on whitespace and ASCII punctuation. Bytes outside
// ASCII pass through unchanged so multi-byte characters stay whole.
std::vector<std::string> tokenize(const std::string& text);

struct Vocabulary {
    static constexpr std::size_t pad_id = 0;
    static constexpr std::size_t oov_id = 1;

    std::map<std::string, std::size_t> to_id;
    std::vector<std::string> to_token;  // index 0 = "<pad>", 1 = "<oov>"

    std::size_t size() const { return to_token.size(); }
    std::size_t id_of(const std::string& token) const;  // oov_id when absent
};

// Ids 2.. assigned to tokens with corpus frequency >= min_freq, most frequent
// first, ties broken lexicographically. min_freq must be at least 1.
Vocabulary build_vocab(const std::vector<Thread>& threads, std::size_t min_freq);

struct TokenizedThread {
    std::string id;
    std::vector<std::size_t> post_ids;       // exactly l entries
    std::vector<std::size_t> comment_ids;    // exactly k entries
    std::vector<std::uint8_t> post_mask;     // 1 = real token, 0 = padding
    std::vector<std::uint8_t> comment_mask;
    int label = kLabelTrue;
};

// Post tokens padded or truncated to l. Comments are sorted by timestamp,
// concatenated, then padded or truncated to k. A side that tokenizes to
// nothing gets a single OOV token so every channel has at least one real
// position.
TokenizedThread tokenize_and_pad(const Thread& thread, const Vocabulary& vocab, std::size_t l,
                                 std::size_t k);

// Embedding table over the vocabulary. Every row starts from the registry's
// seeded uniform(-0.1, 0.1) draw; when a file is given, rows for tokens found
// in it are overwritten with the file's values. The pad row is always zero.
// File format: optional "count dim" header line, then one line per token:
// the token followed by dim decimal floats. A row width that disagrees with
// dim raises a format error.
EmbeddingTable load_embeddings(const std::optional<std::string>& path, const Vocabulary& vocab,
                               std::size_t dim, ParamRegistry& reg, const std::string& name,
                               bool trainable = true);

struct SplitResult {
    std::vector<Thread> train;
    std::vector<Thread> val;
    std::vector<Thread> test;
};

// Seeded shuffle, then a 70/10/20 cut: train = floor(0.7 n), val =
// floor(0.1 n), test = the rest. Needs at least 10 threads. The stratified
// flag applies the same rule per label before merging, keeping class balance
// close in every part.
SplitResult split(const std::vector<Thread>& threads, std::uint64_t seed,
                  bool stratified = false);

struct SyntheticSpec {
    std::size_t thread_count = 200;
    double conflict_strength = 1.0;  // chance a false thread's comments flip the claim
    double emotion_strength = 0.0;   // how strongly comment mood tracks (or inverts) the post
    std::uint64_t seed = 0;

    // Lexicon profile.
    std::size_t claim_pairs = 6;     // claim/denial token pairs
    std::size_t mood_words = 6;      // tokens per mood polarity
    std::size_t filler_words = 40;

    // Length profile.
    std::size_t post_fillers_min = 3;
    std::size_t post_fillers_max = 6;
    std::size_t comments_min = 2;
    std::size_t comments_max = 5;
    std::size_t comment_fillers_min = 2;
    std::size_t comment_fillers_max = 4;
};

struct SyntheticLexicon {
    std::vector<std::pair<std::string, std::string>> claims;  // (claim, denial)
    std::vector<std::string> upbeat;
    std::vector<std::string> alarmed;
    std::vector<std::string> fillers;
};

SyntheticLexicon make_lexicon(const SyntheticSpec& spec);

// Ground truth written alongside each generated thread: where the planted
// denial tokens sit in the chronological comment token stream.
struct PlantRecord {
    std::string id;
    bool conflicted = false;
    std::vector<std::size_t> comment_positions;
};

struct SyntheticCorpus {
    std::vector<Thread> threads;
    std::vector<PlantRecord> plants;  // same order as threads
};

// Balanced labeled threads built so that single-token frequencies carry no
// label signal at any strength; only the post-comment combination does.
// Every comment carries one claim-side token: the post's side normally, the
// opposite side throughout a conflicted thread. A false thread is conflicted
// with probability conflict_strength. Comment mood matches the post's mood
// with probability (1 + s) / 2 on true threads and (1 - s) / 2 on false ones.
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

void write_plants(const std::string& path, const std::vector<PlantRecord>& plants);
std::vector<PlantRecord> read_plants(const std::string& path);

// Surface-level reference classifier: a thread is called false when any
// claim token and its denial both occur in it (post and comments combined).
int claim_conflict_label(const Thread& thread, const SyntheticLexicon& lexicon);

// Index batches over a container of the given size. Shuffled order is seeded;
// the final short batch is kept.
std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size,
                                                   std::uint64_t seed, bool shuffle);

}  // namespace aifn
