/*
 * Copyright 2026 The fedtil Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fedtil/dataset.hpp"
#include "fedtil/nn.hpp"

namespace fedtil::federation {

enum class Weighting { kBySampleCount, kUniform };

const char* weighting_name(Weighting w);
Weighting parse_weighting(const std::string& name);

// Every site participates in every round.
struct FederationConfig {
  int rounds = 30;
  int epochs_per_round = 1;
  Weighting weighting = Weighting::kBySampleCount;
  std::uint64_t master_seed = 7;
  bool parallel = false;  // one thread per collaborator
  nn::TrainOptions train;

  void validate() const;
};

// Shuffle seed for one site's local training in one round.
std::uint64_t derive_seed(std::uint64_t master_seed, int site_id, std::uint32_t round);

struct RoundUpdate {
  int site_id = 0;
  std::uint32_t round_index = 0;
  nn::ModelWeights weights;
  std::uint64_t n_train_samples = 0;
  double local_train_loss = 0.0;
};

// Elementwise weighted mean, accumulated in double in ascending site order so
// the result does not depend on the order of `updates`.
nn::ModelWeights aggregate(std::span<const RoundUpdate> updates, Weighting weighting);

// ---- Messages -------------------------------------------------------------

struct TaskAssignment {
  std::uint32_t round = 0;
  nn::ModelWeights global_weights;
  std::uint32_t epochs = 1;
};

struct ModelUpdate {
  RoundUpdate update;
};

struct TrainingComplete {
  std::uint32_t rounds = 0;
  nn::ModelWeights final_weights;
};

// Sent instead of a ModelUpdate when local training throws.
struct CollaboratorFailure {
  std::uint32_t round = 0;
  std::string reason;
};

enum class MessageType : std::uint8_t {
  kTaskAssignment = 1,
  kModelUpdate = 2,
  kTrainingComplete = 3,
  kCollaboratorFailure = 4,
};

struct Message {
  int site_id = 0;  // addressee for aggregator->site, sender for site->aggregator
  std::variant<TaskAssignment, ModelUpdate, TrainingComplete, CollaboratorFailure> body;

  MessageType type() const;
  std::uint32_t round() const;
};

// Header: "FSHM" | u16 version | u8 msg_type | u32 round | u16 site_id, then
// a type-specific payload (see README) embedding the weight format.
inline constexpr std::uint16_t kMessageVersion = 1;

std::vector<std::uint8_t> encode_message(const Message& m);
Message decode_message(std::span<const std::uint8_t> bytes);

// ---- Transport ------------------------------------------------------------

// Unbounded FIFO of encoded messages with blocking receive.
class Mailbox {
 public:
  void post(std::vector<std::uint8_t> bytes);
  std::vector<std::uint8_t> receive();

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::vector<std::uint8_t>> queue_;
};

inline constexpr int kAggregatorEndpoint = 0;

class Transport {
 public:
  virtual ~Transport() = default;
  // Endpoint kAggregatorEndpoint is the aggregator; sites use their site id.
  virtual void send(int endpoint, const Message& m) = 0;
  virtual Message receive(int endpoint) = 0;
};

// Messages pass through the wire codec even in process.
class InProcessTransport : public Transport {
 public:
  explicit InProcessTransport(const std::vector<int>& site_ids);

  void send(int endpoint, const Message& m) override;
  Message receive(int endpoint) override;

 private:
  Mailbox& mailbox(int endpoint);

  std::map<int, std::unique_ptr<Mailbox>> boxes_;
};

// ---- Aggregator -----------------------------------------------------------

struct RoundRecord {
  std::uint32_t round = 0;
  double mean_local_loss = 0.0;               // unweighted mean over sites
  std::map<int, double> site_losses;
};

struct TraceEvent {
  enum Kind { kBeginRound, kAccept, kAggregate, kFinish } kind;
  std::uint32_t round;
  int site_id;  // kAccept only
};

class Aggregator {
 public:
  enum class Phase { kIdle, kWaitingForUpdates, kFinished };

  Aggregator(nn::ModelWeights initial, std::vector<int> site_ids, int rounds,
             Weighting weighting);

  // Idle -> WaitingForUpdates; returns the round being opened.
  std::uint32_t begin_round();
  // Rejects wrong round, unknown or duplicate site, and layout changes.
  void accept(RoundUpdate update);
  bool round_complete() const;
  // Aggregates once every site has reported; -> Idle, or Finished after the
  // last round.
  const nn::ModelWeights& complete_round();

  Phase phase() const { return phase_; }
  std::uint32_t current_round() const { return round_; }
  const std::set<int>& received() const { return received_; }
  const nn::ModelWeights& global_weights() const { return global_; }
  const std::vector<RoundRecord>& history() const { return history_; }
  const std::vector<TraceEvent>& trace() const { return trace_; }

 private:
  nn::ModelWeights global_;
  std::set<int> sites_;
  int rounds_;
  Weighting weighting_;
  Phase phase_ = Phase::kIdle;
  std::uint32_t round_ = 0;
  std::set<int> received_;
  std::vector<RoundUpdate> pending_;
  std::vector<RoundRecord> history_;
  std::vector<TraceEvent> trace_;
};

// ---- Collaborator ---------------------------------------------------------

class Collaborator {
 public:
  Collaborator(int site_id, const nn::NetworkSpec& spec, const dataset::PatchSet& train,
               std::uint64_t master_seed, nn::TrainOptions options);

  int site_id() const { return site_id_; }
  RoundUpdate run_task(const TaskAssignment& task) const;

  // Receives one message and answers it. Returns false on TrainingComplete.
  bool serve_one(Transport& transport) const;

 private:
  int site_id_;
  const nn::NetworkSpec& spec_;
  const dataset::PatchSet& train_;
  std::uint64_t master_seed_;
  nn::TrainOptions options_;
};

// ---- Scenarios ------------------------------------------------------------

struct FederationResult {
  nn::ModelWeights consensus;
  std::vector<RoundRecord> history;
  std::vector<TraceEvent> trace;
};

FederationResult run_federated(const FederationConfig& config, const nn::NetworkSpec& spec,
                               const std::vector<dataset::SiteShard>& shards);

// Site key used for seed derivation when training on `data`: the common site
// id if every sample comes from one site, otherwise 0 (pooled data).
int training_site_key(const dataset::PatchSet& data);

// The round schedule of run_federated on one data holder: `rounds` successive
// train_epochs calls of `epochs_per_round` epochs (optimizer reset each
// round) with derive_seed(master_seed, site_key, r).
nn::TrainResult train_schedule(const FederationConfig& config, const nn::NetworkSpec& spec,
                               const dataset::PatchSet& data, int site_key);

// Centralized baseline on pooled data, same schedule as the federation.
nn::TrainResult run_centralized(const FederationConfig& config, const nn::NetworkSpec& spec,
                                const dataset::PatchSet& pooled_train);

// One independent model per site, same schedule as the federation.
std::map<int, nn::TrainResult> run_site_specific(const FederationConfig& config,
                                                 const nn::NetworkSpec& spec,
                                                 const std::vector<dataset::SiteShard>& shards);

// "round,mean_local_loss,site_<id>..." one line per round.
std::string history_csv(const std::vector<RoundRecord>& history);

}  // namespace fedtil::federation
