// SPDX-License-Identifier: Apache-2.0
#include "macd/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

namespace macd {

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::size_t di(Domain d) { return static_cast<std::size_t>(idx(d)); }
std::size_t bi(Behavior b) { return static_cast<std::size_t>(b); }

}  // namespace

int DomainVocab::add(const std::string& item_id) {
  auto it = index_.find(item_id);
  if (it != index_.end()) return it->second;
  items_.push_back(item_id);
  const int i = static_cast<int>(items_.size());
  index_.emplace(item_id, i);
  return i;
}

int DomainVocab::find(const std::string& item_id) const {
  auto it = index_.find(item_id);
  return it == index_.end() ? 0 : it->second;
}

InteractionLog ingest_log(const std::filesystem::path& path, int min_item_interactions) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open interaction log " + path.string());
  return ingest_log(in, min_item_interactions, path.string());
}

InteractionLog ingest_log(std::istream& in, int min_item_interactions, const std::string& source) {
  if (min_item_interactions < 1) throw DataError("min_item_interactions must be >= 1");
  std::vector<InteractionEvent> raw;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto where = [&] { return source + ":" + std::to_string(line_no) + ": "; };
    const auto fields = split_tabs(line);
    if (fields.size() != 5)
      throw DataError(where() + "expected 5 tab-separated fields, found " + std::to_string(fields.size()));
    InteractionEvent e;
    e.user_id = std::string(fields[0]);
    e.item_id = std::string(fields[1]);
    if (e.user_id.empty() || e.item_id.empty()) throw DataError(where() + "empty user or item id");
    if (fields[2] == "X") {
      e.domain = Domain::X;
    } else if (fields[2] == "Y") {
      e.domain = Domain::Y;
    } else {
      throw DataError(where() + "unknown domain '" + std::string(fields[2]) + "' (expected X or Y)");
    }
    if (fields[3] == "target") {
      e.behavior = Behavior::Target;
    } else if (fields[3] == "auxiliary") {
      e.behavior = Behavior::Auxiliary;
    } else {
      throw DataError(where() + "unknown behavior '" + std::string(fields[3]) + "' (expected target or auxiliary)");
    }
    const auto ts = fields[4];
    const auto [ptr, ec] = std::from_chars(ts.data(), ts.data() + ts.size(), e.timestamp);
    if (ec != std::errc() || ptr != ts.data() + ts.size() || ts.empty())
      throw DataError(where() + "timestamp '" + std::string(ts) + "' is not a base-10 integer");
    raw.push_back(std::move(e));
  }

  std::array<std::unordered_map<std::string, int>, 2> counts;
  for (const auto& e : raw) ++counts[di(e.domain)][e.item_id];

  InteractionLog log;
  for (auto& e : raw) {
    if (counts[di(e.domain)][e.item_id] < min_item_interactions) {
      ++log.dropped_events;
      continue;
    }
    e.item = log.vocabs[di(e.domain)].add(e.item_id);
    ++log.counts[di(e.domain)][bi(e.behavior)];
    log.events.push_back(std::move(e));
  }
  if (log.events.empty())
    throw DataError(source + ": no events left after dropping items with fewer than " +
                    std::to_string(min_item_interactions) + " interactions");
  return log;
}

std::size_t UserHistory::event_count() const {
  std::size_t n = 0;
  for (const auto& per_domain : streams)
    for (const auto& s : per_domain) n += s.size();
  return n;
}

std::vector<UserHistory> collect_histories(const InteractionLog& log) {
  std::map<std::string, UserHistory> by_user;
  for (const auto& e : log.events) {
    auto& h = by_user[e.user_id];
    h.user_id = e.user_id;
    h.stream(e.domain, e.behavior).push_back({e.item, e.timestamp});
  }
  std::vector<UserHistory> out;
  out.reserve(by_user.size());
  for (auto& [id, h] : by_user) {
    for (auto& per_domain : h.streams)
      for (auto& s : per_domain)
        std::stable_sort(s.begin(), s.end(),
                         [](const TimedItem& a, const TimedItem& b) { return a.timestamp < b.timestamp; });
    out.push_back(std::move(h));
  }
  return out;
}

IndexSequence left_pad(const std::vector<TimedItem>& stream, std::size_t end, int max_len) {
  IndexSequence out(static_cast<std::size_t>(max_len), 0);
  end = std::min(end, stream.size());
  const std::size_t keep = std::min(end, static_cast<std::size_t>(max_len));
  const std::size_t offset = static_cast<std::size_t>(max_len) - keep;
  for (std::size_t i = 0; i < keep; ++i) out[offset + i] = stream[end - keep + i].item;
  return out;
}

UserSequences sequences_from_history(const UserHistory& h, int target_len, int aux_len) {
  UserSequences u;
  u.user_id = h.user_id;
  const auto& sx = h.stream(Domain::X, Behavior::Target);
  const auto& sy = h.stream(Domain::Y, Behavior::Target);
  const auto& cx = h.stream(Domain::X, Behavior::Auxiliary);
  const auto& cy = h.stream(Domain::Y, Behavior::Auxiliary);
  u.s_x = left_pad(sx, sx.size(), target_len);
  u.s_y = left_pad(sy, sy.size(), target_len);
  u.c_x = left_pad(cx, cx.size(), aux_len);
  u.c_y = left_pad(cy, cy.size(), aux_len);
  u.s_x_true_len = static_cast<int>(sx.size());
  u.s_y_true_len = static_cast<int>(sy.size());
  u.c_x_true_len = static_cast<int>(cx.size());
  u.c_y_true_len = static_cast<int>(cy.size());
  return u;
}

std::map<std::string, UserSequences> build_sequences(const InteractionLog& log, int target_len, int aux_len) {
  if (target_len < 1) throw DataError("T must be >= 1");
  if (aux_len < target_len) throw DataError("T' must be >= T");
  std::map<std::string, UserSequences> out;
  for (const auto& h : collect_histories(log)) out.emplace(h.user_id, sequences_from_history(h, target_len, aux_len));
  return out;
}

double compute_long_tail_threshold(std::vector<int> lengths) {
  if (lengths.empty()) throw DataError("long-tail threshold of an empty population");
  std::sort(lengths.begin(), lengths.end(), std::greater<>());
  const std::size_t top = (lengths.size() + 4) / 5;
  double total = 0;
  for (std::size_t i = 0; i < top; ++i) total += lengths[i];
  return total / static_cast<double>(top);
}

// ---------------------------------------------------------------------------

std::string_view name(Partition p) {
  switch (p) {
    case Partition::Train: return "train";
    case Partition::Val: return "val";
    case Partition::Test: return "test";
  }
  return "?";
}

Partition parse_partition(std::string_view s) {
  if (s == "train") return Partition::Train;
  if (s == "val") return Partition::Val;
  if (s == "test") return Partition::Test;
  throw DataError("unknown partition '" + std::string(s) + "'");
}

std::vector<std::size_t> Scenario::members(Partition p) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < flags.size(); ++i)
    if (flags[i].partition == p) out.push_back(i);
  return out;
}

int Scenario::evaluated_length(std::size_t user, Domain d) const {
  if (flags[user].cold_start[di(d)]) return 0;
  return users[user].target_length(d);
}

namespace {

void drop_domain(UserHistory& h, Domain d) {
  h.stream(d, Behavior::Target).clear();
  h.stream(d, Behavior::Auxiliary).clear();
}

bool has_target(const UserHistory& h) { return h.active(Domain::X) || h.active(Domain::Y); }

/// Keeps llround(density·n) of the user's n events, chosen uniformly.
void subsample(UserHistory& h, double density, std::mt19937_64& rng) {
  const std::size_t n = h.event_count();
  const auto keep = static_cast<std::size_t>(std::llround(density * static_cast<double>(n)));
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  std::vector<std::size_t> chosen;
  chosen.reserve(keep);
  std::sample(all.begin(), all.end(), std::back_inserter(chosen), keep, rng);
  std::vector<bool> kept(n, false);
  for (auto i : chosen) kept[i] = true;
  std::size_t pos = 0;
  for (auto& per_domain : h.streams)
    for (auto& s : per_domain) {
      std::vector<TimedItem> out;
      for (const auto& e : s)
        if (kept[pos++]) out.push_back(e);
      s = std::move(out);
    }
}

}  // namespace

Scenario make_scenario(std::vector<UserHistory> histories, const std::array<DomainVocab, 2>& vocabs,
                       const ScenarioOptions& opts) {
  if (!(opts.overlap_ratio > 0 && opts.overlap_ratio <= 1)) throw DataError("overlap ratio K_u must lie in (0, 1]");
  if (!(opts.cold_start_ratio >= 0 && opts.cold_start_ratio < 1))
    throw DataError("cold-start ratio K_cs must lie in [0, 1)");
  if (!(opts.density > 0 && opts.density <= 1)) throw DataError("density D_s must lie in (0, 1]");
  if (!(opts.train_fraction > 0 && opts.val_fraction >= 0 && opts.train_fraction + opts.val_fraction <= 1))
    throw DataError("split fractions must be positive and sum to at most 1");

  std::mt19937_64 rng(opts.seed);
  std::erase_if(histories, [](const UserHistory& h) { return !has_target(h); });

  // Overlap control.
  std::vector<std::size_t> dual;
  for (std::size_t i = 0; i < histories.size(); ++i)
    if (histories[i].active(Domain::X) && histories[i].active(Domain::Y)) dual.push_back(i);
  std::shuffle(dual.begin(), dual.end(), rng);
  const auto retained =
      static_cast<std::size_t>(std::floor(opts.overlap_ratio * static_cast<double>(dual.size()) + 1e-9));
  for (std::size_t k = retained; k < dual.size(); ++k) {
    auto& h = histories[dual[k]];
    drop_domain(h, h.target_length(Domain::X) < h.target_length(Domain::Y) ? Domain::X : Domain::Y);
  }

  // Density control.
  if (opts.density < 1) {
    for (auto& h : histories) subsample(h, opts.density, rng);
    std::erase_if(histories, [](const UserHistory& h) { return !has_target(h); });
  }
  if (histories.empty()) throw DataError("scenario has no users with target events");

  Scenario s;
  s.options = opts;
  s.vocabs = vocabs;
  s.users = std::move(histories);
  s.flags.resize(s.users.size());
  for (std::size_t i = 0; i < s.users.size(); ++i)
    s.flags[i].overlapping = s.users[i].active(Domain::X) && s.users[i].active(Domain::Y);

  // User-level split.
  std::vector<std::size_t> order(s.users.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const double n = static_cast<double>(order.size());
  const auto n_train = static_cast<std::size_t>(std::floor(opts.train_fraction * n + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(opts.val_fraction * n + 1e-9));
  for (std::size_t k = 0; k < order.size(); ++k)
    s.flags[order[k]].partition = k < n_train ? Partition::Train
                                  : k < n_train + n_val ? Partition::Val
                                                        : Partition::Test;

  // Cold-start selection, alternating domains over the shuffled overlap list.
  if (opts.cold_start_ratio > 0) {
    std::size_t candidates = 0;
    for (Partition p : {Partition::Val, Partition::Test}) {
      std::vector<std::size_t> pool;
      for (auto i : order)
        if (s.flags[i].partition == p && s.flags[i].overlapping) pool.push_back(i);
      candidates += pool.size();
      const auto m = static_cast<std::size_t>(
          std::floor(opts.cold_start_ratio * static_cast<double>(pool.size()) + 1e-9));
      for (std::size_t k = 0; k < m; ++k) s.flags[pool[k]].cold_start[k % 2] = true;
    }
    if (candidates == 0) throw DataError("cold-start ratio > 0 but no overlapping validation/test users");
  }

  // Long-tail thresholds from the training population.
  for (Domain d : kDomains) {
    std::vector<int> lengths;
    for (auto i : s.members(Partition::Train))
      if (s.users[i].active(d)) lengths.push_back(s.users[i].target_length(d));
    if (lengths.empty())
      for (const auto& h : s.users)
        if (h.active(d)) lengths.push_back(h.target_length(d));
    s.long_tail_threshold[di(d)] = lengths.empty() ? 0.0 : compute_long_tail_threshold(lengths);
  }
  for (std::size_t i = 0; i < s.users.size(); ++i)
    for (Domain d : kDomains)
      s.flags[i].long_tail[di(d)] = s.evaluated_length(i, d) < s.long_tail_threshold[di(d)];
  return s;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

using json = nlohmann::ordered_json;
constexpr const char* kScenarioFormat = "macd-scenario/1";

json stream_json(const std::vector<TimedItem>& s) {
  json a = json::array();
  for (const auto& e : s) a.push_back(json::array({e.item, e.timestamp}));
  return a;
}

std::vector<TimedItem> stream_from_json(const json& a) {
  std::vector<TimedItem> s;
  for (const auto& e : a) s.push_back({e.at(0).get<int>(), e.at(1).get<std::int64_t>()});
  return s;
}

}  // namespace

std::string serialize_scenario(const Scenario& s) {
  json j;
  j["format"] = kScenarioFormat;
  j["options"] = {{"overlap_ratio", s.options.overlap_ratio},   {"cold_start_ratio", s.options.cold_start_ratio},
                  {"density", s.options.density},               {"train_fraction", s.options.train_fraction},
                  {"val_fraction", s.options.val_fraction},     {"seed", s.options.seed}};
  j["long_tail_threshold"] = {{"X", s.long_tail_threshold[0]}, {"Y", s.long_tail_threshold[1]}};
  j["vocab"] = {{"X", s.vocabs[0].items()}, {"Y", s.vocabs[1].items()}};
  json users = json::array();
  for (std::size_t i = 0; i < s.users.size(); ++i) {
    const auto& h = s.users[i];
    const auto& f = s.flags[i];
    json u;
    u["id"] = h.user_id;
    u["partition"] = std::string(name(f.partition));
    u["overlapping"] = f.overlapping;
    u["cold_start"] = {{"X", f.cold_start[0]}, {"Y", f.cold_start[1]}};
    u["long_tail"] = {{"X", f.long_tail[0]}, {"Y", f.long_tail[1]}};
    for (Domain d : kDomains)
      u[std::string(name(d))] = {{"target", stream_json(h.stream(d, Behavior::Target))},
                                 {"auxiliary", stream_json(h.stream(d, Behavior::Auxiliary))}};
    users.push_back(std::move(u));
  }
  j["users"] = std::move(users);
  return j.dump(1) + "\n";
}

Scenario parse_scenario(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format") != kScenarioFormat) throw DataError("unsupported scenario format");
    Scenario s;
    const auto& o = j.at("options");
    s.options.overlap_ratio = o.at("overlap_ratio").get<double>();
    s.options.cold_start_ratio = o.at("cold_start_ratio").get<double>();
    s.options.density = o.at("density").get<double>();
    s.options.train_fraction = o.at("train_fraction").get<double>();
    s.options.val_fraction = o.at("val_fraction").get<double>();
    s.options.seed = o.at("seed").get<std::uint64_t>();
    for (Domain d : kDomains) {
      const std::string key(name(d));
      s.long_tail_threshold[di(d)] = j.at("long_tail_threshold").at(key).get<double>();
      s.vocabs[di(d)] = DomainVocab(d);
      for (const auto& item : j.at("vocab").at(key)) s.vocabs[di(d)].add(item.get<std::string>());
    }
    for (const auto& u : j.at("users")) {
      UserHistory h;
      UserFlags f;
      h.user_id = u.at("id").get<std::string>();
      f.partition = parse_partition(u.at("partition").get<std::string>());
      f.overlapping = u.at("overlapping").get<bool>();
      for (Domain d : kDomains) {
        const std::string key(name(d));
        f.cold_start[di(d)] = u.at("cold_start").at(key).get<bool>();
        f.long_tail[di(d)] = u.at("long_tail").at(key).get<bool>();
        h.stream(d, Behavior::Target) = stream_from_json(u.at(key).at("target"));
        h.stream(d, Behavior::Auxiliary) = stream_from_json(u.at(key).at("auxiliary"));
        for (const auto& e : h.stream(d, Behavior::Target))
          if (e.item < 1 || e.item > s.vocabs[di(d)].size()) throw DataError("item index out of vocabulary");
        for (const auto& e : h.stream(d, Behavior::Auxiliary))
          if (e.item < 1 || e.item > s.vocabs[di(d)].size()) throw DataError("item index out of vocabulary");
      }
      s.users.push_back(std::move(h));
      s.flags.push_back(f);
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed scenario file: ") + e.what());
  }
}

void save_scenario(const Scenario& s, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write scenario file " + path.string());
  out << serialize_scenario(s);
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open scenario file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

// ---------------------------------------------------------------------------
// Views

bool UserView::observed(Domain d) const {
  const auto nonzero = [](const IndexSequence& s) {
    return std::any_of(s.begin(), s.end(), [](int v) { return v != 0; });
  };
  return nonzero(target[di(d)]) || nonzero(auxiliary[di(d)]);
}

UserView make_view(const UserHistory& h, const ViewCut& cut, int target_len, int aux_len) {
  UserView v;
  for (Domain d : kDomains) {
    const auto k = di(d);
    const auto& target = h.stream(d, Behavior::Target);
    const auto& aux = h.stream(d, Behavior::Auxiliary);
    if (cut.blank[k]) {
      v.target[k] = IndexSequence(static_cast<std::size_t>(target_len), 0);
      v.auxiliary[k] = IndexSequence(static_cast<std::size_t>(aux_len), 0);
      continue;
    }
    std::size_t target_end = target.size();
    std::size_t aux_end = aux.size();
    if (cut.label[k] >= 0) {
      if (static_cast<std::size_t>(cut.label[k]) >= target.size()) throw DataError("view cut beyond target stream");
      target_end = static_cast<std::size_t>(cut.label[k]);
      const auto t = target[target_end].timestamp;
      aux_end = static_cast<std::size_t>(
          std::lower_bound(aux.begin(), aux.end(), t,
                           [](const TimedItem& e, std::int64_t ts) { return e.timestamp < ts; }) -
          aux.begin());
    }
    v.target[k] = left_pad(target, target_end, target_len);
    v.auxiliary[k] = left_pad(aux, aux_end, aux_len);
  }
  return v;
}

ViewCut evaluation_cut(const UserHistory& h, const UserFlags& f) {
  ViewCut c;
  for (Domain d : kDomains) {
    const auto k = di(d);
    if (h.active(d)) c.label[k] = h.target_length(d) - 1;
    c.blank[k] = f.cold_start[k];
  }
  return c;
}

}  // namespace macd
