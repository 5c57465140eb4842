#include "aifn/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace aifn {

namespace {

using nlohmann::json;

std::string line_tag(const std::string& path, std::size_t line_no) {
    return path + " line " + std::to_string(line_no);
}

int parse_label(const std::string& text, const std::string& where, bool& unverified) {
    unverified = false;
    if (text == "true") {
        return kLabelTrue;
    }
    if (text == "false") {
        return kLabelFalse;
    }
    if (text == "unverified") {
        unverified = true;
        return kLabelTrue;
    }
    throw FormatError(where + ": label must be \"true\", \"false\", or \"unverified\", got \"" +
                      text + "\"");
}

}  // namespace

ParseResult parse_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open corpus file " + path);
    }
    ParseResult result;
    std::unordered_set<std::string> seen_ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string where = line_tag(path, line_no);
        json j;
        try {
            j = json::parse(line);
            Thread t;
            t.id = j.at("id").get<std::string>();
            t.post = j.at("post").get<std::string>();
            for (const json& c : j.at("comments")) {
                Comment comment;
                comment.text = c.at("text").get<std::string>();
                comment.ts = c.at("ts").get<double>();
                t.comments.push_back(std::move(comment));
            }
            bool unverified = false;
            t.label = parse_label(j.at("label").get<std::string>(), where, unverified);
            if (unverified) {
                ++result.dropped_unverified;
                continue;
            }
            if (t.post.empty()) {
                throw FormatError(where + ": post must not be empty");
            }
            if (!seen_ids.insert(t.id).second) {
                throw FormatError(where + ": duplicate thread id \"" + t.id + "\"");
            }
            result.threads.push_back(std::move(t));
        } catch (const json::exception& e) {
            throw FormatError(where + ": " + e.what());
        }
    }
    return result;
}

void write_corpus(const std::string& path, const std::vector<Thread>& threads) {
    std::ofstream out(path);
    if (!out) {
        throw FormatError("cannot write corpus file " + path);
    }
    for (const Thread& t : threads) {
        json j;
        j["id"] = t.id;
        j["post"] = t.post;
        j["comments"] = json::array();
        for (const Comment& c : t.comments) {
            j["comments"].push_back({{"text", c.text}, {"ts", c.ts}});
        }
        j["label"] = t.label == kLabelFalse ? "false" : "true";
        out << j.dump() << "\n";
    }
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string current;
    for (const char raw : text) {
        const unsigned char c = static_cast<unsigned char>(raw);
        if (c >= 0x80) {
            current.push_back(raw);
        } else if (std::isalnum(c)) {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else {
            if (!current.empty()) {
                tokens.push_back(std::move(current));
                current.clear();
            }
        }
    }
    if (!current.empty()) {
        tokens.push_back(std::move(current));
    }
    return tokens;
}

std::size_t Vocabulary::id_of(const std::string& token) const {
    const auto it = to_id.find(token);
    return it == to_id.end() ? oov_id : it->second;
}

Vocabulary build_vocab(const std::vector<Thread>& threads, std::size_t min_freq) {
    if (min_freq < 1) {
        throw ConfigError("vocabulary min_freq must be at least 1");
    }
    std::unordered_map<std::string, std::size_t> freq;
    auto count = [&](const std::string& text) {
        for (std::string& tok : tokenize(text)) {
            ++freq[tok];
        }
    };
    for (const Thread& t : threads) {
        count(t.post);
        for (const Comment& c : t.comments) {
            count(c.text);
        }
    }
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (const auto& [tok, n] : freq) {
        if (n >= min_freq) {
            kept.emplace_back(tok, n);
        }
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) {
            return a.second > b.second;
        }
        return a.first < b.first;
    });
    Vocabulary vocab;
    vocab.to_token = {"<pad>", "<oov>"};
    for (const auto& [tok, n] : kept) {
        (void)n;
        vocab.to_id.emplace(tok, vocab.to_token.size());
        vocab.to_token.push_back(tok);
    }
    return vocab;
}

TokenizedThread tokenize_and_pad(const Thread& thread, const Vocabulary& vocab, std::size_t l,
                                 std::size_t k) {
    if (l < 1 || k < 1) {
        throw ConfigError("sequence lengths must be at least 1");
    }
    auto to_ids = [&](const std::vector<std::string>& tokens, std::size_t max_len) {
        std::vector<std::size_t> ids;
        std::vector<std::uint8_t> mask;
        ids.reserve(max_len);
        mask.reserve(max_len);
        for (const std::string& tok : tokens) {
            if (ids.size() == max_len) {
                break;
            }
            ids.push_back(vocab.id_of(tok));
            mask.push_back(1);
        }
        if (ids.empty()) {
            // Give every channel one real position even for silent input.
            ids.push_back(Vocabulary::oov_id);
            mask.push_back(1);
        }
        while (ids.size() < max_len) {
            ids.push_back(Vocabulary::pad_id);
            mask.push_back(0);
        }
        return std::pair{ids, mask};
    };

    std::vector<Comment> ordered = thread.comments;
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const Comment& a, const Comment& b) { return a.ts < b.ts; });
    std::vector<std::string> comment_tokens;
    for (const Comment& c : ordered) {
        for (std::string& tok : tokenize(c.text)) {
            comment_tokens.push_back(std::move(tok));
        }
    }

    TokenizedThread out;
    out.id = thread.id;
    out.label = thread.label;
    std::tie(out.post_ids, out.post_mask) = to_ids(tokenize(thread.post), l);
    std::tie(out.comment_ids, out.comment_mask) = to_ids(comment_tokens, k);
    return out;
}

EmbeddingTable load_embeddings(const std::optional<std::string>& path, const Vocabulary& vocab,
                               std::size_t dim, ParamRegistry& reg, const std::string& name,
                               bool trainable) {
    if (dim == 0) {
        throw ConfigError("embedding dim must be positive");
    }
    EmbeddingTable table = random_embedding_table(reg, name, vocab.size(), dim, trainable);
    if (!path) {
        return table;
    }
    std::ifstream in(*path);
    if (!in) {
        throw FormatError("cannot open embedding file " + *path);
    }
    const std::span<double> values = table.matrix.values_mut();
    std::string line;
    std::size_t line_no = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream fields(line);
        std::vector<std::string> parts;
        for (std::string part; fields >> part;) {
            parts.push_back(std::move(part));
        }
        if (parts.empty()) {
            continue;
        }
        if (first && dim != 1 && parts.size() == 2) {
            // Optional "count dim" header: both fields plain nonnegative integers.
            const auto as_count = [](const std::string& s) -> std::optional<std::size_t> {
                if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
                    return std::nullopt;
                }
                return static_cast<std::size_t>(std::stoull(s));
            };
            const auto rows = as_count(parts[0]);
            const auto cols = as_count(parts[1]);
            if (rows && cols) {
                if (*cols != dim) {
                    throw FormatError(line_tag(*path, line_no) + ": header dim " +
                                      std::to_string(*cols) + " does not match requested dim " +
                                      std::to_string(dim));
                }
                first = false;
                continue;
            }
        }
        first = false;
        if (parts.size() != dim + 1) {
            throw FormatError(line_tag(*path, line_no) + ": expected token plus " +
                              std::to_string(dim) + " values, got " +
                              std::to_string(parts.size() - 1));
        }
        const auto it = vocab.to_id.find(parts[0]);
        if (it == vocab.to_id.end()) {
            continue;  // token outside the vocabulary, keep the seeded row
        }
        for (std::size_t j = 0; j < dim; ++j) {
            std::size_t consumed = 0;
            double v = 0.0;
            try {
                v = std::stod(parts[j + 1], &consumed);
            } catch (const std::exception&) {
                consumed = 0;
            }
            if (consumed != parts[j + 1].size()) {
                throw FormatError(line_tag(*path, line_no) + ": bad float \"" + parts[j + 1] +
                                  "\"");
            }
            values[it->second * dim + j] = v;
        }
    }
    return table;
}

namespace {

SplitResult cut_splits(std::vector<Thread> shuffled) {
    const std::size_t n = shuffled.size();
    // floor(0.7 n) and floor(0.1 n), computed exactly in integers.
    const std::size_t n_train = 7 * n / 10;
    const std::size_t n_val = n / 10;
    SplitResult out;
    out.train.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.val.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_train),
                   shuffled.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    out.test.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_train + n_val),
                    shuffled.end());
    return out;
}

}  // namespace

SplitResult split(const std::vector<Thread>& threads, std::uint64_t seed, bool stratified) {
    if (threads.size() < 10) {
        throw DomainError("need at least 10 threads to split, got " +
                          std::to_string(threads.size()));
    }
    Rng rng(seed);
    if (!stratified) {
        std::vector<Thread> all = threads;
        shuffle(all, rng);
        return cut_splits(std::move(all));
    }
    std::vector<Thread> truths;
    std::vector<Thread> falses;
    for (const Thread& t : threads) {
        (t.label == kLabelFalse ? falses : truths).push_back(t);
    }
    shuffle(truths, rng);
    shuffle(falses, rng);
    SplitResult a = cut_splits(std::move(truths));
    SplitResult b = cut_splits(std::move(falses));
    auto merge = [&](std::vector<Thread>& lhs, std::vector<Thread>& rhs) {
        lhs.insert(lhs.end(), std::make_move_iterator(rhs.begin()),
                   std::make_move_iterator(rhs.end()));
        shuffle(lhs, rng);
        return std::move(lhs);
    };
    SplitResult out;
    out.train = merge(a.train, b.train);
    out.val = merge(a.val, b.val);
    out.test = merge(a.test, b.test);
    return out;
}

SyntheticLexicon make_lexicon(const SyntheticSpec& spec) {
    SyntheticLexicon lex;
    for (std::size_t i = 0; i < spec.claim_pairs; ++i) {
        lex.claims.emplace_back("claim" + std::to_string(i), "deny" + std::to_string(i));
    }
    for (std::size_t i = 0; i < spec.mood_words; ++i) {
        lex.upbeat.push_back("cheer" + std::to_string(i));
        lex.alarmed.push_back("dread" + std::to_string(i));
    }
    for (std::size_t i = 0; i < spec.filler_words; ++i) {
        lex.fillers.push_back("word" + std::to_string(i));
    }
    return lex;
}

namespace {

void validate_spec(const SyntheticSpec& spec) {
    if (spec.conflict_strength < 0.0 || spec.conflict_strength > 1.0) {
        throw ConfigError("conflict_strength must lie in [0, 1]");
    }
    if (spec.emotion_strength < 0.0 || spec.emotion_strength > 1.0) {
        throw ConfigError("emotion_strength must lie in [0, 1]");
    }
    if (spec.claim_pairs < 1 || spec.mood_words < 1 || spec.filler_words < 1) {
        throw ConfigError("lexicon pools must be non-empty");
    }
    if (spec.comments_min < 1 || spec.comments_min > spec.comments_max) {
        throw ConfigError("comment count range invalid");
    }
    if (spec.post_fillers_min > spec.post_fillers_max ||
        spec.comment_fillers_min > spec.comment_fillers_max) {
        throw ConfigError("filler count range invalid");
    }
}

std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) {
            out.push_back(' ');
        }
        out += tokens[i];
    }
    return out;
}

}  // namespace

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
    validate_spec(spec);
    const SyntheticLexicon lex = make_lexicon(spec);
    Rng rng(spec.seed);

    const std::size_t n_false = spec.thread_count / 2;
    std::vector<int> labels(spec.thread_count - n_false, kLabelTrue);
    labels.insert(labels.end(), n_false, kLabelFalse);
    shuffle(labels, rng);

    auto filler = [&] { return lex.fillers[rng.below(lex.fillers.size())]; };
    auto mood_token = [&](std::size_t polarity) {
        const auto& pool = polarity == 0 ? lex.upbeat : lex.alarmed;
        return pool[rng.below(pool.size())];
    };
    auto span_count = [&](std::size_t lo, std::size_t hi) {
        return lo + rng.below(hi - lo + 1);
    };
    auto insert_at = [&](std::vector<std::string>& tokens, std::string tok) {
        const std::size_t at = rng.below(tokens.size() + 1);
        tokens.insert(tokens.begin() + static_cast<std::ptrdiff_t>(at), std::move(tok));
        return at;
    };

    SyntheticCorpus out;
    for (std::size_t t = 0; t < spec.thread_count; ++t) {
        const int label = labels[t];
        const std::size_t pair = rng.below(lex.claims.size());
        const std::size_t post_side = rng.below(2);
        const std::size_t post_mood = rng.below(2);
        const bool flip_coin = rng.uniform() < spec.conflict_strength;
        const bool conflicted = label == kLabelFalse && flip_coin;
        const std::size_t comment_side = conflicted ? 1 - post_side : post_side;
        const double mood_agree_p = label == kLabelTrue ? (1.0 + spec.emotion_strength) / 2.0
                                                        : (1.0 - spec.emotion_strength) / 2.0;

        auto side_token = [&](std::size_t side) {
            return side == 0 ? lex.claims[pair].first : lex.claims[pair].second;
        };

        std::vector<std::string> post_tokens;
        const std::size_t n_pf = span_count(spec.post_fillers_min, spec.post_fillers_max);
        for (std::size_t i = 0; i < n_pf; ++i) {
            post_tokens.push_back(filler());
        }
        insert_at(post_tokens, mood_token(post_mood));
        insert_at(post_tokens, side_token(post_side));

        Thread thread;
        std::string digits = std::to_string(t);
        while (digits.size() < 6) {
            digits.insert(digits.begin(), '0');
        }
        thread.id = "synth-" + digits;
        thread.label = label;
        thread.post = join_tokens(post_tokens);

        PlantRecord plant;
        plant.id = thread.id;
        plant.conflicted = conflicted;

        std::size_t stream_offset = 0;
        const std::size_t n_c = span_count(spec.comments_min, spec.comments_max);
        for (std::size_t c = 0; c < n_c; ++c) {
            std::vector<std::string> tokens;
            const std::size_t n_cf =
                span_count(spec.comment_fillers_min, spec.comment_fillers_max);
            for (std::size_t i = 0; i < n_cf; ++i) {
                tokens.push_back(filler());
            }
            const std::size_t mood =
                rng.uniform() < mood_agree_p ? post_mood : 1 - post_mood;
            insert_at(tokens, mood_token(mood));
            const std::size_t claim_at = insert_at(tokens, side_token(comment_side));
            if (conflicted) {
                plant.comment_positions.push_back(stream_offset + claim_at);
            }
            stream_offset += tokens.size();
            thread.comments.push_back(
                Comment{join_tokens(tokens), static_cast<double>(c + 1)});
        }

        out.threads.push_back(std::move(thread));
        out.plants.push_back(std::move(plant));
    }
    return out;
}

void write_plants(const std::string& path, const std::vector<PlantRecord>& plants) {
    std::ofstream out(path);
    if (!out) {
        throw FormatError("cannot write plant file " + path);
    }
    for (const PlantRecord& p : plants) {
        json j;
        j["id"] = p.id;
        j["conflicted"] = p.conflicted;
        j["comment_positions"] = p.comment_positions;
        out << j.dump() << "\n";
    }
}

std::vector<PlantRecord> read_plants(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open plant file " + path);
    }
    std::vector<PlantRecord> plants;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        try {
            const json j = json::parse(line);
            PlantRecord p;
            p.id = j.at("id").get<std::string>();
            p.conflicted = j.at("conflicted").get<bool>();
            p.comment_positions = j.at("comment_positions").get<std::vector<std::size_t>>();
            plants.push_back(std::move(p));
        } catch (const json::exception& e) {
            throw FormatError(line_tag(path, line_no) + ": " + e.what());
        }
    }
    return plants;
}

int claim_conflict_label(const Thread& thread, const SyntheticLexicon& lexicon) {
    std::set<std::string> present;
    for (std::string& tok : tokenize(thread.post)) {
        present.insert(std::move(tok));
    }
    for (const Comment& c : thread.comments) {
        for (std::string& tok : tokenize(c.text)) {
            present.insert(std::move(tok));
        }
    }
    for (const auto& [claim, denial] : lexicon.claims) {
        if (present.count(claim) && present.count(denial)) {
            return kLabelFalse;
        }
    }
    return kLabelTrue;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size,
                                                   std::uint64_t seed, bool shuffle_order) {
    if (batch_size < 1) {
        throw ConfigError("batch size must be at least 1");
    }
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) {
        order[i] = i;
    }
    if (shuffle_order) {
        Rng rng(seed);
        shuffle(order, rng);
    }
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < count; start += batch_size) {
        const std::size_t end = std::min(count, start + batch_size);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

}  // namespace aifn
