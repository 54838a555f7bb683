#include "fnd/ingest.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "fnd/error.hpp"
#include "fnd/random.hpp"

namespace fnd {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<RecordView> make_views(const RecordSet& rs) {
  std::vector<RecordView> views;
  views.reserve(rs.size());
  for (const auto& r : rs.records) views.emplace_back(r);
  return views;
}

void validate_record(const NewsRecord& r) {
  if (r.id.empty()) throw DataError("record with empty id");
  if (r.published_at < 0) throw DataError("record " + r.id + ": negative published_at");
  if (r.label && *r.label != 0 && *r.label != 1) {
    throw DataError("record " + r.id + ": label must be 0 or 1");
  }
  std::unordered_set<std::string> ids;
  for (const auto& n : r.cascade) {
    if (n.timestamp < 0) {
      throw DataError("record " + r.id + ": tweet " + n.tweet_id + " has negative timestamp");
    }
    if (!ids.insert(n.tweet_id).second) {
      throw DataError("record " + r.id + ": duplicate tweet_id " + n.tweet_id);
    }
  }
  for (const auto& n : r.cascade) {
    if (n.parent && !ids.contains(*n.parent)) {
      throw DataError("record " + r.id + ": tweet " + n.tweet_id +
                      " references unknown parent " + *n.parent);
    }
    if (n.parent && *n.parent == n.tweet_id) {
      throw DataError("record " + r.id + ": tweet " + n.tweet_id + " is its own parent");
    }
  }
}

namespace {

template <typename T>
T required(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) {
    throw DataError(where + "missing field " + key);
  }
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw DataError(where + "field " + key + " has the wrong type");
  }
}

template <typename T>
T optional_or(const json& obj, const char* key, T fallback, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw DataError(where + "field " + key + " has the wrong type");
  }
}

CascadeNode node_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) throw DataError(where + "cascade entry is not an object");
  CascadeNode n;
  n.tweet_id = required<std::string>(j, "tweet_id", where);
  n.user_id = required<std::string>(j, "user_id", where);
  n.timestamp = required<std::int64_t>(j, "timestamp", where);
  if (auto it = j.find("parent"); it != j.end() && !it->is_null()) {
    n.parent = required<std::string>(j, "parent", where);
  }
  n.is_public = optional_or<bool>(j, "is_public", true, where);
  n.mentions = optional_or<std::vector<std::string>>(j, "mentions", {}, where);
  n.hashtags = optional_or<std::vector<std::string>>(j, "hashtags", {}, where);
  if (auto it = j.find("text"); it != j.end() && !it->is_null()) {
    n.text = required<std::string>(j, "text", where);
  }
  n.user_verified = optional_or<bool>(j, "user_verified", false, where);
  n.followers = optional_or<std::int64_t>(j, "followers", 0, where);
  n.friends = optional_or<std::int64_t>(j, "friends", 0, where);
  n.lists = optional_or<std::int64_t>(j, "lists", 0, where);
  n.favourites = optional_or<std::int64_t>(j, "favourites", 0, where);
  n.user_created_at = optional_or<std::int64_t>(j, "user_created_at", 0, where);
  if (n.followers < 0 || n.friends < 0 || n.lists < 0 || n.favourites < 0) {
    throw DataError(where + "tweet " + n.tweet_id + " has a negative user count");
  }
  return n;
}

ordered_json node_to_json(const CascadeNode& n) {
  ordered_json j;
  j["tweet_id"] = n.tweet_id;
  j["user_id"] = n.user_id;
  j["timestamp"] = n.timestamp;
  if (n.parent) j["parent"] = *n.parent;
  j["is_public"] = n.is_public;
  j["mentions"] = n.mentions;
  j["hashtags"] = n.hashtags;
  if (n.text) j["text"] = *n.text;
  j["user_verified"] = n.user_verified;
  j["followers"] = n.followers;
  j["friends"] = n.friends;
  j["lists"] = n.lists;
  j["favourites"] = n.favourites;
  j["user_created_at"] = n.user_created_at;
  return j;
}

}  // namespace

NewsRecord parse_record_line(const std::string& line, std::size_t line_no) {
  const std::string where = "line " + std::to_string(line_no) + ": ";
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError(where + "malformed JSON (" + e.what() + ")");
  }
  if (!j.is_object()) throw DataError(where + "record is not a JSON object");

  NewsRecord r;
  r.id = required<std::string>(j, "id", where);
  r.published_at = required<std::int64_t>(j, "published_at", where);
  r.title = required<std::string>(j, "title", where);
  auto cascade = j.find("cascade");
  if (cascade == j.end() || cascade->is_null()) throw DataError(where + "missing field cascade");
  if (!cascade->is_array()) throw DataError(where + "field cascade has the wrong type");
  for (const auto& node : *cascade) r.cascade.push_back(node_from_json(node, where));
  if (auto it = j.find("label"); it != j.end() && !it->is_null()) {
    r.label = required<int>(j, "label", where);
  }
  if (auto it = j.find("domain_tag"); it != j.end() && !it->is_null()) {
    r.domain_tag = required<std::string>(j, "domain_tag", where);
  }
  try {
    validate_record(r);
  } catch (const DataError& e) {
    throw DataError(where + e.what());
  }
  return r;
}

RecordSet parse_records(std::istream& in) {
  RecordSet rs;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    NewsRecord r = parse_record_line(line, line_no);
    if (!seen.insert(r.id).second) {
      throw DataError("line " + std::to_string(line_no) + ": duplicate record id " + r.id);
    }
    rs.records.push_back(std::move(r));
  }
  return rs;
}

RecordSet read_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open record file " + path);
  RecordSet rs = parse_records(in);
  rs.provenance = path;
  return rs;
}

std::string serialize_record(const NewsRecord& r) {
  ordered_json j;
  j["id"] = r.id;
  j["published_at"] = r.published_at;
  j["title"] = r.title;
  j["cascade"] = ordered_json::array();
  for (const auto& n : r.cascade) j["cascade"].push_back(node_to_json(n));
  if (r.label) j["label"] = *r.label;
  if (r.domain_tag) j["domain_tag"] = *r.domain_tag;
  return j.dump();
}

void write_records(std::ostream& out, const RecordSet& rs) {
  for (const auto& r : rs.records) out << serialize_record(r) << '\n';
}

void write_records(const std::string& path, const RecordSet& rs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write record file " + path);
  write_records(out, rs);
}

std::pair<RecordSet, RecordSet> split_dataset(const RecordSet& rs, double train_fraction,
                                              std::uint64_t seed) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) {
    throw UsageError("train_fraction must lie in [0, 1]");
  }
  if (rs.empty()) throw UsageError("cannot split an empty record set");

  std::vector<std::size_t> order(rs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x5b1d));
  rng.shuffle(std::span<std::size_t>(order));

  const auto n_train = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(rs.size())));
  std::vector<bool> in_train(rs.size(), false);
  for (std::size_t i = 0; i < n_train; ++i) in_train[order[i]] = true;

  // Both halves keep the original file order.
  RecordSet train, test;
  train.provenance = rs.provenance + " [train split]";
  test.provenance = rs.provenance + " [test split]";
  for (std::size_t i = 0; i < rs.size(); ++i) {
    (in_train[i] ? train : test).records.push_back(rs.records[i]);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace fnd
