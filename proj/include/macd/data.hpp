// SPDX-License-Identifier: Apache-2.0
//
// Two-domain interaction logs, per-user behavior streams, padded sequences and
// open-world scenario construction (overlap ratio, density, user splits,
// cold-start and long-tail annotations).
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "macd/tensor.hpp"

namespace macd {

/// Thrown for malformed input files and unsatisfiable data requests.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct InteractionEvent {
  std::string user_id;
  std::string item_id;
  Domain domain = Domain::X;
  Behavior behavior = Behavior::Target;
  std::int64_t timestamp = 0;
  int item = 0;  // dense index in the domain vocabulary, filled after filtering
};

/// Bijection item_id ↔ [1, |V|]; 0 is reserved for padding.
class DomainVocab {
 public:
  DomainVocab() = default;
  explicit DomainVocab(Domain d) : domain_(d) {}

  int add(const std::string& item_id);
  int find(const std::string& item_id) const;  // 0 when absent
  const std::string& item_id(int index) const { return items_.at(static_cast<std::size_t>(index - 1)); }
  int size() const { return static_cast<int>(items_.size()); }
  Domain domain() const { return domain_; }
  const std::vector<std::string>& items() const { return items_; }

 private:
  Domain domain_ = Domain::X;
  std::vector<std::string> items_;
  std::unordered_map<std::string, int> index_;
};

struct InteractionLog {
  std::vector<InteractionEvent> events;  // input order, filtered
  std::array<DomainVocab, 2> vocabs{DomainVocab(Domain::X), DomainVocab(Domain::Y)};
  std::array<std::array<std::size_t, 2>, 2> counts{};  // [domain][behavior]
  std::size_t dropped_events = 0;

  const DomainVocab& vocab(Domain d) const { return vocabs[static_cast<std::size_t>(idx(d))]; }
  std::size_t count(Domain d, Behavior b) const {
    return counts[static_cast<std::size_t>(idx(d))][static_cast<std::size_t>(b)];
  }
};

/// Reads `user<TAB>item<TAB>domain<TAB>behavior<TAB>timestamp` lines ('#' starts
/// a comment line), then drops items with fewer than `min_item_interactions`
/// events. Vocabularies index the surviving items in first-appearance order.
InteractionLog ingest_log(const std::filesystem::path& path, int min_item_interactions);
InteractionLog ingest_log(std::istream& in, int min_item_interactions, const std::string& source = "<stream>");

struct TimedItem {
  int item = 0;
  std::int64_t timestamp = 0;
  friend bool operator==(const TimedItem&, const TimedItem&) = default;
};

/// Chronological (stable on ties) behavior streams of one user.
struct UserHistory {
  std::string user_id;
  std::array<std::array<std::vector<TimedItem>, 2>, 2> streams;  // [domain][behavior]

  std::vector<TimedItem>& stream(Domain d, Behavior b) {
    return streams[static_cast<std::size_t>(idx(d))][static_cast<std::size_t>(b)];
  }
  const std::vector<TimedItem>& stream(Domain d, Behavior b) const {
    return streams[static_cast<std::size_t>(idx(d))][static_cast<std::size_t>(b)];
  }
  int target_length(Domain d) const { return static_cast<int>(stream(d, Behavior::Target).size()); }
  bool active(Domain d) const { return target_length(d) > 0; }
  std::size_t event_count() const;
};

/// One history per user, ordered by user id.
std::vector<UserHistory> collect_histories(const InteractionLog& log);

/// The `max_len` most recent entries of stream[0, end), left-padded with 0.
IndexSequence left_pad(const std::vector<TimedItem>& stream, std::size_t end, int max_len);

struct UserSequences {
  std::string user_id;
  IndexSequence s_x, s_y;  // length T
  IndexSequence c_x, c_y;  // length T'
  int s_x_true_len = 0, s_y_true_len = 0, c_x_true_len = 0, c_y_true_len = 0;
};

UserSequences sequences_from_history(const UserHistory& h, int target_len, int aux_len);

/// Per-user padded target (length T) and auxiliary (length T') sequences.
std::map<std::string, UserSequences> build_sequences(const InteractionLog& log, int target_len, int aux_len);

/// Mean length of the ceil(20%) longest sequences.
double compute_long_tail_threshold(std::vector<int> lengths);

// ---------------------------------------------------------------------------
// Scenarios

struct ScenarioOptions {
  double overlap_ratio = 1.0;     // K_u
  double cold_start_ratio = 0.0;  // K_cs
  double density = 1.0;           // D_s
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
};

enum class Partition : int { Train = 0, Val = 1, Test = 2 };
std::string_view name(Partition p);
Partition parse_partition(std::string_view s);

struct UserFlags {
  Partition partition = Partition::Train;
  bool overlapping = false;
  std::array<bool, 2> cold_start{false, false};
  std::array<bool, 2> long_tail{false, false};
};

struct Scenario {
  ScenarioOptions options;
  std::array<double, 2> long_tail_threshold{0, 0};
  std::array<DomainVocab, 2> vocabs{DomainVocab(Domain::X), DomainVocab(Domain::Y)};
  std::vector<UserHistory> users;  // ordered by user id
  std::vector<UserFlags> flags;    // parallel to users

  const DomainVocab& vocab(Domain d) const { return vocabs[static_cast<std::size_t>(idx(d))]; }
  std::vector<std::size_t> members(Partition p) const;
  /// Length of the user's target stream in domain d as seen at evaluation
  /// (zero for a domain in which the user is cold-start).
  int evaluated_length(std::size_t user, Domain d) const;
};

/// Applies overlap control, density subsampling, the user-level split,
/// cold-start selection and long-tail annotation. Deterministic in opts.seed.
Scenario make_scenario(std::vector<UserHistory> histories, const std::array<DomainVocab, 2>& vocabs,
                       const ScenarioOptions& opts);

std::string serialize_scenario(const Scenario& s);
Scenario parse_scenario(const std::string& text);
void save_scenario(const Scenario& s, const std::filesystem::path& path);
Scenario load_scenario(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Model-facing views

/// Padded sequences of one user as fed to the model.
struct UserView {
  std::array<IndexSequence, 2> target;     // length T per domain
  std::array<IndexSequence, 2> auxiliary;  // length T' per domain

  bool observed(Domain d) const;
};

/// Where to cut each domain: `label[d]` is the position of the held-out target
/// event (its predecessors form S, auxiliary events strictly earlier form C), or
/// -1 to use the whole history. `blank[d]` empties the domain entirely.
struct ViewCut {
  std::array<int, 2> label{-1, -1};
  std::array<bool, 2> blank{false, false};
};

UserView make_view(const UserHistory& h, const ViewCut& cut, int target_len, int aux_len);

/// The evaluation view: last target item of every active domain held out,
/// cold-start domains blanked.
ViewCut evaluation_cut(const UserHistory& h, const UserFlags& f);

}  // namespace macd
