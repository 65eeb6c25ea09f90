#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "revamp/common.hpp"

namespace revamp::data {

// One log event: a visit to a POI at a timestamp, carrying the set of app
// categories used around the visit and the POI's category set. No
// coordinates anywhere; categories are the only semantic signal.
struct CheckIn {
  int poi_id = 0;
  long long timestamp = 0;
  std::vector<int> app_cats;  // sorted, unique, nonempty
  std::vector<int> poi_cats;  // sorted, unique, nonempty

  bool operator==(const CheckIn&) const = default;
};

struct UserSeq {
  long long user_id = 0;
  std::vector<CheckIn> checkins;  // timestamps non-decreasing

  bool operator==(const UserSeq&) const = default;
};

struct Corpus {
  std::vector<UserSeq> users;
  std::size_t num_pois = 0;
  std::size_t num_app_cats = 0;
  std::size_t num_poi_cats = 0;

  bool operator==(const Corpus&) const = default;

  std::size_t total_checkins() const {
    std::size_t n = 0;
    for (const auto& u : users) n += u.checkins.size();
    return n;
  }
};

enum class FileFormat { kCsv, kJsonl };

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<int> parse_cat_set(const std::string& field, std::size_t line_no,
                                      const char* what) {
  std::vector<int> out;
  std::stringstream ss(field);
  std::string tok;
  while (std::getline(ss, tok, '|')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    try {
      int v = std::stoi(tok);
      if (v < 0)
        throw ParseError("line " + std::to_string(line_no) + ": negative " + what + " id");
      out.push_back(v);
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception&) {
      throw ParseError("line " + std::to_string(line_no) + ": bad " + what + " id '" + tok + "'");
    }
  }
  if (out.empty())
    throw ParseError("line " + std::to_string(line_no) + ": empty " + what + " set");
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline void sort_normalize(std::vector<int>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

}  // namespace detail

// Drops users with fewer than `min_count` check-ins and POIs with fewer than
// `min_count` occurrences corpus-wide, iterating to a fixpoint (removing one
// can re-trigger the other). Cardinalities are recomputed from the survivors,
// which is what makes load -> save -> load an exact round trip.
inline Corpus apply_min_count_filter(Corpus c, std::size_t min_count = 5) {
  bool changed = true;
  while (changed) {
    changed = false;
    for (auto it = c.users.begin(); it != c.users.end();) {
      if (it->checkins.size() < min_count) {
        it = c.users.erase(it);
        changed = true;
      } else {
        ++it;
      }
    }
    std::unordered_map<int, std::size_t> poi_count;
    for (const auto& u : c.users)
      for (const auto& e : u.checkins) ++poi_count[e.poi_id];
    for (auto& u : c.users) {
      auto keep = std::remove_if(u.checkins.begin(), u.checkins.end(), [&](const CheckIn& e) {
        return poi_count[e.poi_id] < min_count;
      });
      if (keep != u.checkins.end()) {
        u.checkins.erase(keep, u.checkins.end());
        changed = true;
      }
    }
  }
  c.num_pois = c.num_app_cats = c.num_poi_cats = 0;
  for (const auto& u : c.users)
    for (const auto& e : u.checkins) {
      c.num_pois = std::max(c.num_pois, static_cast<std::size_t>(e.poi_id) + 1);
      for (int a : e.app_cats)
        c.num_app_cats = std::max(c.num_app_cats, static_cast<std::size_t>(a) + 1);
      for (int s : e.poi_cats)
        c.num_poi_cats = std::max(c.num_poi_cats, static_cast<std::size_t>(s) + 1);
    }
  return c;
}

// One check-in per line. CSV: user,poi,timestamp,app|cats,poi|cats.
// JSONL mirrors the same five fields. Users keep first-appearance order;
// within a user, check-ins are stably sorted by timestamp.
inline Corpus load_corpus(const std::string& path, FileFormat fmt, std::size_t min_count = 5) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file: " + path);
  Corpus c;
  std::unordered_map<long long, std::size_t> user_index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    long long user_id = 0;
    CheckIn e;
    if (fmt == FileFormat::kCsv) {
      std::vector<std::string> fields;
      std::stringstream ss(t);
      std::string tok;
      while (std::getline(ss, tok, ',')) fields.push_back(detail::trim(tok));
      if (fields.size() != 5)
        throw ParseError("line " + std::to_string(line_no) + ": expected 5 fields, got " +
                         std::to_string(fields.size()));
      try {
        user_id = std::stoll(fields[0]);
        e.poi_id = std::stoi(fields[1]);
        e.timestamp = std::stoll(fields[2]);
      } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line_no) + ": bad numeric field");
      }
      e.app_cats = detail::parse_cat_set(fields[3], line_no, "app category");
      e.poi_cats = detail::parse_cat_set(fields[4], line_no, "poi category");
    } else {
      nlohmann::json j = nlohmann::json::parse(t, nullptr, false);
      if (j.is_discarded() || !j.is_object())
        throw ParseError("line " + std::to_string(line_no) + ": bad json");
      try {
        user_id = j.at("user_id").get<long long>();
        e.poi_id = j.at("poi_id").get<int>();
        e.timestamp = j.at("timestamp").get<long long>();
        e.app_cats = j.at("app_cats").get<std::vector<int>>();
        e.poi_cats = j.at("poi_cats").get<std::vector<int>>();
      } catch (const std::exception& ex) {
        throw ParseError("line " + std::to_string(line_no) + ": " + ex.what());
      }
      detail::sort_normalize(e.app_cats);
      detail::sort_normalize(e.poi_cats);
      if (e.app_cats.empty() || e.poi_cats.empty())
        throw ParseError("line " + std::to_string(line_no) + ": empty category set");
      for (int v : e.app_cats)
        if (v < 0) throw ParseError("line " + std::to_string(line_no) + ": negative id");
      for (int v : e.poi_cats)
        if (v < 0) throw ParseError("line " + std::to_string(line_no) + ": negative id");
    }
    if (user_id < 0 || e.poi_id < 0)
      throw ParseError("line " + std::to_string(line_no) + ": negative id");
    auto [it, fresh] = user_index.try_emplace(user_id, c.users.size());
    if (fresh) c.users.push_back(UserSeq{user_id, {}});
    c.users[it->second].checkins.push_back(std::move(e));
  }
  for (auto& u : c.users)
    std::stable_sort(u.checkins.begin(), u.checkins.end(),
                     [](const CheckIn& a, const CheckIn& b) { return a.timestamp < b.timestamp; });
  return apply_min_count_filter(std::move(c), min_count);
}

inline void save_corpus(const std::string& path, const Corpus& c, FileFormat fmt) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write corpus file: " + path);
  for (const auto& u : c.users) {
    for (const auto& e : u.checkins) {
      if (fmt == FileFormat::kCsv) {
        out << u.user_id << ',' << e.poi_id << ',' << e.timestamp << ',';
        for (std::size_t i = 0; i < e.app_cats.size(); ++i)
          out << (i ? "|" : "") << e.app_cats[i];
        out << ',';
        for (std::size_t i = 0; i < e.poi_cats.size(); ++i)
          out << (i ? "|" : "") << e.poi_cats[i];
        out << '\n';
      } else {
        nlohmann::json j;
        j["user_id"] = u.user_id;
        j["poi_id"] = e.poi_id;
        j["timestamp"] = e.timestamp;
        j["app_cats"] = e.app_cats;
        j["poi_cats"] = e.poi_cats;
        out << j.dump() << '\n';
      }
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace revamp::data
