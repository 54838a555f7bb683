#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <unordered_map>

#include "fnd/error.hpp"
#include "fnd/ingest.hpp"
#include "fnd/kvconfig.hpp"
#include "fnd/random.hpp"

namespace fnd {

namespace {

constexpr const char* kCommonWords[] = {
    "the",   "a",      "of",     "to",     "in",    "new",     "report", "says",
    "after", "over",   "about",  "why",    "how",   "what",    "is",     "on",
    "for",   "with",   "news",   "update", "first", "could",   "more",   "now",
    "just",  "latest", "new",    "this",   "from",  "amid",    "shows",  "claims",
    "week",  "today",  "people", "big",    "live",  "breaking"};

constexpr const char* kPositiveWords[] = {"good", "great", "love", "happy", "win",
                                          "support", "best", "hope", "true", "excellent"};
constexpr const char* kNegativeWords[] = {"bad", "fake", "hoax", "hate", "terrible",
                                          "lie", "wrong", "scam", "worst", "angry"};

// Injective map from an index to a pronounceable consonant-vowel string.
std::string syllables(int index) {
  static constexpr char kCons[] = "bdfgklmnprstvz";
  static constexpr char kVow[] = "aeiou";
  constexpr int kC = sizeof(kCons) - 1;
  constexpr int kV = sizeof(kVow) - 1;
  std::string s;
  int x = index;
  do {
    const int digit = x % (kC * kV);
    s.push_back(kCons[digit / kV]);
    s.push_back(kVow[digit % kV]);
    x /= kC * kV;
  } while (x > 0);
  return s;
}

std::vector<std::string> common_vocabulary(int n) {
  std::vector<std::string> words;
  std::set<std::string> seen;
  for (const char* w : kCommonWords) {
    if (static_cast<int>(words.size()) >= n) break;
    if (seen.insert(w).second) words.emplace_back(w);
  }
  for (int i = 0; static_cast<int>(words.size()) < n; ++i) words.push_back("co" + syllables(i));
  return words;
}

struct UserProfile {
  bool verified = false;
  std::int64_t followers = 0, friends = 0, lists = 0, favourites = 0, created_at = 0;
};

UserProfile profile_for(const std::string& user, double verified_rate, std::int64_t start,
                        std::uint64_t seed) {
  Rng rng(fnv1a64(user, seed));
  UserProfile p;
  p.verified = rng.bernoulli(verified_rate);
  p.followers = static_cast<std::int64_t>(std::exp(rng.uniform(2.0, p.verified ? 13.0 : 9.0)));
  p.friends = static_cast<std::int64_t>(std::exp(rng.uniform(1.0, 7.0)));
  p.lists = static_cast<std::int64_t>(std::exp(rng.uniform(0.0, 4.0)));
  p.favourites = static_cast<std::int64_t>(std::exp(rng.uniform(1.0, 10.0)));
  p.created_at = start - static_cast<std::int64_t>(rng.index(5ULL * 365 * 86400));
  return p;
}

void check_config(const SyntheticConfig& cfg) {
  if (cfg.domains.empty()) throw UsageError("synthetic config has zero domains");
  std::set<std::string> names;
  for (const auto& d : cfg.domains) {
    if (d.name.empty() || d.name.find_first_of(" \t") != std::string::npos) {
      throw UsageError("synthetic domain names must be non-empty and free of whitespace");
    }
    if (!names.insert(d.name).second) throw UsageError("duplicate synthetic domain " + d.name);
    if (d.records <= 0) throw UsageError("synthetic domain " + d.name + " has zero records");
    if (d.topic_words <= 0 || d.users <= 0 || d.title_length <= 0) {
      throw UsageError("synthetic domain " + d.name + " needs topic words, users and titles");
    }
    if (d.fake_fraction < 0.0 || d.fake_fraction > 1.0) {
      throw UsageError("synthetic domain " + d.name + ": fake_fraction outside [0, 1]");
    }
    if (d.marker_words <= 0 && d.markers_per_title > 0) {
      throw UsageError("synthetic domain " + d.name + ": markers need a marker vocabulary");
    }
  }
  if (cfg.common_words < 0 || cfg.shared_users < 0) {
    throw UsageError("synthetic config: negative pool size");
  }
}

}  // namespace

std::vector<std::string> synthetic_topic_words(const SyntheticDomain& d) {
  std::vector<std::string> words;
  for (int i = 0; i < d.topic_words; ++i) words.push_back(d.name + "-" + syllables(i));
  return words;
}

std::vector<std::string> synthetic_marker_words(const SyntheticDomain& d) {
  std::vector<std::string> words;
  for (int i = 0; i < d.marker_words; ++i) words.push_back(d.name + "-" + syllables(i) + "q");
  return words;
}

RecordSet generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
  check_config(cfg);
  const auto common = common_vocabulary(cfg.common_words);

  RecordSet rs;
  rs.provenance = cfg.provenance + " seed=" + std::to_string(seed);

  std::int64_t clock = cfg.start_time;
  for (std::size_t di = 0; di < cfg.domains.size(); ++di) {
    const auto& dom = cfg.domains[di];
    const auto topics = synthetic_topic_words(dom);
    const auto markers = synthetic_marker_words(dom);
    Rng rng(derive_seed(seed, 1000 + di));

    const int n_fake = static_cast<int>(std::lround(dom.fake_fraction * dom.records));
    std::vector<int> labels(dom.records, 0);
    std::fill(labels.begin(), labels.begin() + n_fake, 1);
    rng.shuffle(std::span<int>(labels));

    auto pick_user = [&]() -> std::pair<std::string, double> {
      if (cfg.shared_users > 0 && rng.bernoulli(cfg.cross_user_rate)) {
        return {"shared_u" + std::to_string(rng.index(cfg.shared_users)), 0.1};
      }
      return {dom.name + "_u" + std::to_string(rng.index(dom.users)), dom.verified_rate};
    };

    for (int k = 0; k < dom.records; ++k) {
      NewsRecord r;
      const bool fake = labels[k] == 1;
      r.label = labels[k];
      r.domain_tag = dom.name;
      clock += 600 + static_cast<std::int64_t>(rng.index(3000));
      r.published_at = clock;

      std::vector<std::string> title;
      for (int m = 0; m < dom.markers_per_title; ++m) {
        if (rng.bernoulli(fake ? dom.marker_rate_fake : dom.marker_rate_real)) {
          title.push_back(markers[rng.index(markers.size())]);
        }
      }
      for (int c = 0; c < cfg.common_per_title && !common.empty(); ++c) {
        title.push_back(common[rng.index(common.size())]);
      }
      while (static_cast<int>(title.size()) < dom.title_length) {
        title.push_back(topics[rng.index(topics.size())]);
      }
      rng.shuffle(std::span<std::string>(title));
      for (std::size_t t = 0; t < title.size(); ++t) r.title += (t ? " " : "") + title[t];

      // Galton-Watson cascade with exponential inter-arrival times.
      const double branching = fake ? dom.branching_fake : dom.branching_real;
      const double gap = fake ? dom.interarrival_fake : dom.interarrival_real;
      const double negative_rate = fake ? dom.negative_rate_fake : dom.negative_rate_real;
      std::vector<std::size_t> frontier;
      auto add_node = [&](std::optional<std::size_t> parent) {
        CascadeNode n;
        n.tweet_id = "t" + std::to_string(r.cascade.size());
        auto [user, vrate] = pick_user();
        const UserProfile prof = profile_for(user, vrate, cfg.start_time, seed);
        n.user_id = user;
        const std::int64_t base = parent ? r.cascade[*parent].timestamp : r.published_at;
        n.timestamp = base + 1 + static_cast<std::int64_t>(rng.exponential(gap));
        if (parent) {
          n.parent = r.cascade[*parent].tweet_id;
          if (rng.bernoulli(0.3)) n.mentions.push_back(r.cascade[*parent].user_id);
        }
        n.is_public = rng.bernoulli(0.9);
        const int tags = static_cast<int>(rng.index(3));
        for (int t = 0; t < tags; ++t) {
          n.hashtags.push_back(dom.name + "tag" + std::to_string(rng.index(10)));
        }
        if (rng.bernoulli(0.8)) {
          std::string text = title[rng.index(title.size())] + " " + title[rng.index(title.size())];
          if (rng.bernoulli(negative_rate)) {
            text += std::string(" ") + kNegativeWords[rng.index(std::size(kNegativeWords))];
          } else if (rng.bernoulli(0.3)) {
            text += std::string(" ") + kPositiveWords[rng.index(std::size(kPositiveWords))];
          }
          n.text = text;
        }
        n.user_verified = prof.verified;
        n.followers = prof.followers;
        n.friends = prof.friends;
        n.lists = prof.lists;
        n.favourites = prof.favourites;
        n.user_created_at = prof.created_at;
        r.cascade.push_back(std::move(n));
        frontier.push_back(r.cascade.size() - 1);
      };

      const int roots = 1 + rng.poisson(dom.root_mean);
      for (int i = 0; i < roots && static_cast<int>(r.cascade.size()) < dom.max_cascade; ++i) {
        add_node(std::nullopt);
      }
      for (std::size_t head = 0; head < frontier.size(); ++head) {
        const int children = rng.poisson(branching);
        for (int c = 0; c < children && static_cast<int>(r.cascade.size()) < dom.max_cascade;
             ++c) {
          add_node(frontier[head]);
        }
      }
      rs.records.push_back(std::move(r));
    }
  }

  // Interleave domains, then assign neutral ids in file order.
  Rng mix(derive_seed(seed, 77));
  rs.records.shrink_to_fit();
  mix.shuffle(std::span<NewsRecord>(rs.records));
  char buf[32];
  for (std::size_t i = 0; i < rs.records.size(); ++i) {
    std::snprintf(buf, sizeof buf, "n%06zu", i);
    rs.records[i].id = buf;
  }
  return rs;
}

SyntheticConfig parse_synthetic_config(std::istream& in) {
  SyntheticConfig cfg;
  const auto sections = parse_kv(in);
  using Setter = std::function<void(SyntheticDomain&, const KvEntry&)>;
  static const std::map<std::string, Setter> domain_keys = {
      {"name", [](SyntheticDomain& d, const KvEntry& e) { d.name = e.value; }},
      {"records", [](auto& d, const auto& e) { d.records = static_cast<int>(kv_to_int(e)); }},
      {"fake_fraction", [](auto& d, const auto& e) { d.fake_fraction = kv_to_double(e); }},
      {"topic_words", [](auto& d, const auto& e) { d.topic_words = static_cast<int>(kv_to_int(e)); }},
      {"marker_words", [](auto& d, const auto& e) { d.marker_words = static_cast<int>(kv_to_int(e)); }},
      {"users", [](auto& d, const auto& e) { d.users = static_cast<int>(kv_to_int(e)); }},
      {"title_length", [](auto& d, const auto& e) { d.title_length = static_cast<int>(kv_to_int(e)); }},
      {"marker_rate_fake", [](auto& d, const auto& e) { d.marker_rate_fake = kv_to_double(e); }},
      {"marker_rate_real", [](auto& d, const auto& e) { d.marker_rate_real = kv_to_double(e); }},
      {"markers_per_title", [](auto& d, const auto& e) { d.markers_per_title = static_cast<int>(kv_to_int(e)); }},
      {"root_mean", [](auto& d, const auto& e) { d.root_mean = kv_to_double(e); }},
      {"branching_real", [](auto& d, const auto& e) { d.branching_real = kv_to_double(e); }},
      {"branching_fake", [](auto& d, const auto& e) { d.branching_fake = kv_to_double(e); }},
      {"interarrival_real", [](auto& d, const auto& e) { d.interarrival_real = kv_to_double(e); }},
      {"interarrival_fake", [](auto& d, const auto& e) { d.interarrival_fake = kv_to_double(e); }},
      {"verified_rate", [](auto& d, const auto& e) { d.verified_rate = kv_to_double(e); }},
      {"negative_rate_fake", [](auto& d, const auto& e) { d.negative_rate_fake = kv_to_double(e); }},
      {"negative_rate_real", [](auto& d, const auto& e) { d.negative_rate_real = kv_to_double(e); }},
      {"max_cascade", [](auto& d, const auto& e) { d.max_cascade = static_cast<int>(kv_to_int(e)); }},
  };

  for (const auto& sec : sections) {
    if (sec.name.empty()) {
      for (const auto& e : sec.entries) {
        if (e.key == "common_words") cfg.common_words = static_cast<int>(kv_to_int(e));
        else if (e.key == "common_per_title") cfg.common_per_title = static_cast<int>(kv_to_int(e));
        else if (e.key == "shared_users") cfg.shared_users = static_cast<int>(kv_to_int(e));
        else if (e.key == "cross_user_rate") cfg.cross_user_rate = kv_to_double(e);
        else if (e.key == "start_time") cfg.start_time = kv_to_int(e);
        else if (e.key == "provenance") cfg.provenance = e.value;
        else throw DataError("config line " + std::to_string(e.line) + ": unknown key " + e.key);
      }
    } else if (sec.name == "domain") {
      SyntheticDomain d;
      for (const auto& e : sec.entries) {
        auto it = domain_keys.find(e.key);
        if (it == domain_keys.end()) {
          throw DataError("config line " + std::to_string(e.line) + ": unknown domain key " + e.key);
        }
        it->second(d, e);
      }
      cfg.domains.push_back(std::move(d));
    } else {
      throw DataError("config line " + std::to_string(sec.line) + ": unknown section [" +
                      sec.name + "]");
    }
  }
  return cfg;
}

SyntheticConfig read_synthetic_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open synthetic config " + path);
  return parse_synthetic_config(in);
}

}  // namespace fnd
