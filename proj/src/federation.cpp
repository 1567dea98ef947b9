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

#include "fedtil/federation.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <thread>

#include "fedtil/binary_io.hpp"
#include "fedtil/error.hpp"
#include "fedtil/random.hpp"
#include "fedtil/serialize.hpp"

namespace fedtil::federation {
namespace {

constexpr char kMessageMagic[] = "FSHM";

void check_shards(const nn::NetworkSpec& spec, const std::vector<dataset::SiteShard>& shards) {
  if (shards.empty()) throw Error(ErrorCode::kInvalidArgument, "no sites to train");
  std::set<int> seen;
  for (const auto& s : shards) {
    if (!seen.insert(s.site_id).second) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate site id " + std::to_string(s.site_id));
    }
    if (s.site_id < 1 || s.site_id > 0xffff) {
      throw Error(ErrorCode::kInvalidArgument, "site ids must be in [1, 65535]");
    }
    if (s.train.empty()) {
      throw Error(ErrorCode::kCollaborator,
                  "site " + std::to_string(s.site_id) + ": empty training set");
    }
    if (s.train.side != spec.input_side || s.train.channels != spec.input_channels) {
      throw Error(ErrorCode::kShapeMismatch,
                  "site " + std::to_string(s.site_id) + ": patches are " +
                      std::to_string(s.train.side) + "x" + std::to_string(s.train.side) + "x" +
                      std::to_string(s.train.channels) + ", network expects " +
                      std::to_string(spec.input_side) + "x" + std::to_string(spec.input_side) +
                      "x" + std::to_string(spec.input_channels));
    }
  }
}

// Sends TrainingComplete to every collaborator thread and joins them, also on
// the error path.
class CollaboratorThreads {
 public:
  CollaboratorThreads(Transport& transport, const std::vector<Collaborator>& collaborators)
      : transport_(transport), collaborators_(collaborators) {
    for (const auto& c : collaborators_) {
      threads_.emplace_back([this, &c] {
        while (c.serve_one(transport_)) {
        }
      });
    }
  }

  void finish(const nn::ModelWeights& final_weights, std::uint32_t rounds) {
    if (finished_) return;
    finished_ = true;
    for (const auto& c : collaborators_) {
      transport_.send(c.site_id(), {c.site_id(), TrainingComplete{rounds, final_weights}});
    }
    for (auto& t : threads_) t.join();
  }

  ~CollaboratorThreads() {
    if (!finished_ && !threads_.empty()) {
      try {
        finish(nn::ModelWeights{}, 0);
      } catch (...) {
      }
    }
  }

 private:
  Transport& transport_;
  const std::vector<Collaborator>& collaborators_;
  std::vector<std::thread> threads_;
  bool finished_ = false;
};

}  // namespace

const char* weighting_name(Weighting w) {
  return w == Weighting::kUniform ? "uniform" : "by_sample_count";
}

Weighting parse_weighting(const std::string& name) {
  if (name == "by_sample_count") return Weighting::kBySampleCount;
  if (name == "uniform") return Weighting::kUniform;
  throw Error(ErrorCode::kInvalidArgument,
              "unknown weighting '" + name + "' (expected by_sample_count or uniform)");
}

void FederationConfig::validate() const {
  if (rounds < 1) throw Error(ErrorCode::kInvalidArgument, "rounds must be >= 1");
  if (epochs_per_round < 1) throw Error(ErrorCode::kInvalidArgument, "epochs_per_round must be >= 1");
  if (train.batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch_size must be >= 1");
}

std::uint64_t derive_seed(std::uint64_t master_seed, int site_id, std::uint32_t round) {
  return mix_seed(master_seed, static_cast<std::uint64_t>(site_id), round);
}

nn::ModelWeights aggregate(std::span<const RoundUpdate> updates, Weighting weighting) {
  if (updates.empty()) throw Error(ErrorCode::kInvalidArgument, "aggregate of zero updates");
  std::vector<const RoundUpdate*> ordered;
  for (const auto& u : updates) ordered.push_back(&u);
  std::sort(ordered.begin(), ordered.end(),
            [](const RoundUpdate* a, const RoundUpdate* b) { return a->site_id < b->site_id; });

  const auto round = ordered.front()->round_index;
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    const auto& u = *ordered[i];
    if (u.round_index != round) {
      throw Error(ErrorCode::kProtocol, "updates from different rounds (" +
                                            std::to_string(round) + " and " +
                                            std::to_string(u.round_index) + ")");
    }
    if (i > 0 && ordered[i - 1]->site_id == u.site_id) {
      throw Error(ErrorCode::kProtocol, "two updates from site " + std::to_string(u.site_id));
    }
    if (!u.weights.same_layout(ordered.front()->weights)) {
      throw Error(ErrorCode::kShapeMismatch,
                  "update from site " + std::to_string(u.site_id) + " has a different layout");
    }
    if (weighting == Weighting::kBySampleCount && u.n_train_samples == 0) {
      throw Error(ErrorCode::kInvalidArgument,
                  "update from site " + std::to_string(u.site_id) + " reports zero samples");
    }
    total += u.n_train_samples;
  }

  std::vector<double> coeff;
  for (const auto* u : ordered) {
    coeff.push_back(weighting == Weighting::kUniform
                        ? 1.0 / static_cast<double>(ordered.size())
                        : static_cast<double>(u->n_train_samples) / static_cast<double>(total));
  }

  nn::ModelWeights out = ordered.front()->weights;
  std::vector<double> acc;
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    auto& values = out.layers[l].values;
    acc.assign(values.size(), 0.0);
    for (std::size_t i = 0; i < ordered.size(); ++i) {
      const auto& src = ordered[i]->weights.layers[l].values;
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += coeff[i] * src[j];
    }
    for (std::size_t j = 0; j < acc.size(); ++j) values[j] = static_cast<float>(acc[j]);
  }
  return out;
}

// ---- Messages -------------------------------------------------------------

MessageType Message::type() const {
  return static_cast<MessageType>(body.index() + 1);
}

std::uint32_t Message::round() const {
  return std::visit(
      [](const auto& b) -> std::uint32_t {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, ModelUpdate>) {
          return b.update.round_index;
        } else if constexpr (std::is_same_v<T, TrainingComplete>) {
          return b.rounds;
        } else {
          return b.round;
        }
      },
      body);
}

std::vector<std::uint8_t> encode_message(const Message& m) {
  ByteWriter out;
  out.bytes(std::string_view(kMessageMagic, 4));
  out.u16(kMessageVersion);
  out.u8(static_cast<std::uint8_t>(m.type()));
  out.u32(m.round());
  out.u16(static_cast<std::uint16_t>(m.site_id));
  std::visit(
      [&out](const auto& b) {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, TaskAssignment>) {
          out.u32(b.epochs);
          write_weights(out, b.global_weights);
        } else if constexpr (std::is_same_v<T, ModelUpdate>) {
          out.u64(b.update.n_train_samples);
          out.f64(b.update.local_train_loss);
          write_weights(out, b.update.weights);
        } else if constexpr (std::is_same_v<T, TrainingComplete>) {
          write_weights(out, b.final_weights);
        } else {
          out.u32(static_cast<std::uint32_t>(b.reason.size()));
          out.bytes(b.reason);
        }
      },
      m.body);
  return out.take();
}

Message decode_message(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  in.expect_magic(std::string_view(kMessageMagic, 4));
  const std::size_t version_at = in.offset();
  const std::uint16_t version = in.u16();
  if (version != kMessageVersion) {
    throw Error(ErrorCode::kVersion, "message version " + std::to_string(version) +
                                         " unsupported (at byte offset " +
                                         std::to_string(version_at) + ")");
  }
  const std::size_t type_at = in.offset();
  const std::uint8_t type = in.u8();
  const std::uint32_t round = in.u32();
  Message m;
  m.site_id = in.u16();
  switch (static_cast<MessageType>(type)) {
    case MessageType::kTaskAssignment: {
      TaskAssignment t;
      t.round = round;
      t.epochs = in.u32();
      t.global_weights = read_weights(in);
      m.body = std::move(t);
      break;
    }
    case MessageType::kModelUpdate: {
      ModelUpdate u;
      u.update.site_id = m.site_id;
      u.update.round_index = round;
      u.update.n_train_samples = in.u64();
      u.update.local_train_loss = in.f64();
      u.update.weights = read_weights(in);
      m.body = std::move(u);
      break;
    }
    case MessageType::kTrainingComplete: {
      TrainingComplete c;
      c.rounds = round;
      c.final_weights = read_weights(in);
      m.body = std::move(c);
      break;
    }
    case MessageType::kCollaboratorFailure: {
      CollaboratorFailure f;
      f.round = round;
      f.reason = in.bytes(in.u32());
      m.body = std::move(f);
      break;
    }
    default:
      throw ParseError(type_at, "unknown message type " + std::to_string(type));
  }
  if (in.remaining() != 0) throw ParseError(in.offset(), "trailing bytes after message");
  return m;
}

// ---- Transport ------------------------------------------------------------

void Mailbox::post(std::vector<std::uint8_t> bytes) {
  {
    std::lock_guard lock(mu_);
    queue_.push_back(std::move(bytes));
  }
  cv_.notify_one();
}

std::vector<std::uint8_t> Mailbox::receive() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [this] { return !queue_.empty(); });
  auto bytes = std::move(queue_.front());
  queue_.pop_front();
  return bytes;
}

InProcessTransport::InProcessTransport(const std::vector<int>& site_ids) {
  boxes_[kAggregatorEndpoint] = std::make_unique<Mailbox>();
  for (int id : site_ids) boxes_[id] = std::make_unique<Mailbox>();
}

Mailbox& InProcessTransport::mailbox(int endpoint) {
  auto it = boxes_.find(endpoint);
  if (it == boxes_.end()) {
    throw Error(ErrorCode::kProtocol, "no endpoint " + std::to_string(endpoint));
  }
  return *it->second;
}

void InProcessTransport::send(int endpoint, const Message& m) {
  mailbox(endpoint).post(encode_message(m));
}

Message InProcessTransport::receive(int endpoint) {
  return decode_message(mailbox(endpoint).receive());
}

// ---- Aggregator -----------------------------------------------------------

Aggregator::Aggregator(nn::ModelWeights initial, std::vector<int> site_ids, int rounds,
                       Weighting weighting)
    : global_(std::move(initial)),
      sites_(site_ids.begin(), site_ids.end()),
      rounds_(rounds),
      weighting_(weighting) {
  if (sites_.empty()) throw Error(ErrorCode::kInvalidArgument, "aggregator needs >= 1 site");
  if (sites_.size() != site_ids.size()) {
    throw Error(ErrorCode::kInvalidArgument, "duplicate site ids");
  }
  if (rounds < 1) throw Error(ErrorCode::kInvalidArgument, "rounds must be >= 1");
}

std::uint32_t Aggregator::begin_round() {
  if (phase_ != Phase::kIdle) {
    throw Error(ErrorCode::kProtocol, "begin_round outside the idle phase");
  }
  phase_ = Phase::kWaitingForUpdates;
  received_.clear();
  pending_.clear();
  trace_.push_back({TraceEvent::kBeginRound, round_, 0});
  return round_;
}

void Aggregator::accept(RoundUpdate update) {
  if (phase_ != Phase::kWaitingForUpdates) {
    throw Error(ErrorCode::kProtocol, "update received while not waiting for updates");
  }
  if (update.round_index != round_) {
    throw Error(ErrorCode::kProtocol, "site " + std::to_string(update.site_id) +
                                          " sent an update for round " +
                                          std::to_string(update.round_index) + " during round " +
                                          std::to_string(round_));
  }
  if (!sites_.count(update.site_id)) {
    throw Error(ErrorCode::kProtocol, "update from unknown site " + std::to_string(update.site_id));
  }
  if (received_.count(update.site_id)) {
    throw Error(ErrorCode::kProtocol,
                "duplicate update from site " + std::to_string(update.site_id));
  }
  if (!update.weights.same_layout(global_)) {
    throw Error(ErrorCode::kShapeMismatch,
                "update from site " + std::to_string(update.site_id) + " has a different layout");
  }
  if (update.n_train_samples < 1) {
    throw Error(ErrorCode::kProtocol,
                "update from site " + std::to_string(update.site_id) + " reports zero samples");
  }
  received_.insert(update.site_id);
  trace_.push_back({TraceEvent::kAccept, round_, update.site_id});
  pending_.push_back(std::move(update));
}

bool Aggregator::round_complete() const {
  return phase_ == Phase::kWaitingForUpdates && received_.size() == sites_.size();
}

const nn::ModelWeights& Aggregator::complete_round() {
  if (!round_complete()) {
    throw Error(ErrorCode::kProtocol,
                "round " + std::to_string(round_) + " incomplete: " +
                    std::to_string(received_.size()) + " of " + std::to_string(sites_.size()) +
                    " updates");
  }
  global_ = aggregate(pending_, weighting_);
  RoundRecord record;
  record.round = round_;
  double sum = 0.0;
  for (const auto& u : pending_) {
    record.site_losses[u.site_id] = u.local_train_loss;
  }
  for (const auto& [site, loss] : record.site_losses) sum += loss;
  record.mean_local_loss = sum / static_cast<double>(record.site_losses.size());
  history_.push_back(std::move(record));
  trace_.push_back({TraceEvent::kAggregate, round_, 0});
  pending_.clear();
  ++round_;
  if (round_ >= static_cast<std::uint32_t>(rounds_)) {
    phase_ = Phase::kFinished;
    trace_.push_back({TraceEvent::kFinish, round_, 0});
  } else {
    phase_ = Phase::kIdle;
  }
  return global_;
}

// ---- Collaborator ---------------------------------------------------------

Collaborator::Collaborator(int site_id, const nn::NetworkSpec& spec,
                           const dataset::PatchSet& train, std::uint64_t master_seed,
                           nn::TrainOptions options)
    : site_id_(site_id), spec_(spec), train_(train), master_seed_(master_seed), options_(options) {}

RoundUpdate Collaborator::run_task(const TaskAssignment& task) const {
  auto result = nn::train_epochs(spec_, task.global_weights, train_.view(),
                                 static_cast<int>(task.epochs),
                                 derive_seed(master_seed_, site_id_, task.round), options_);
  return {site_id_, task.round, std::move(result.weights), train_.size(),
          result.epoch_losses.back()};
}

bool Collaborator::serve_one(Transport& transport) const {
  Message m;
  try {
    m = transport.receive(site_id_);
  } catch (const std::exception& e) {
    transport.send(kAggregatorEndpoint,
                   {site_id_, CollaboratorFailure{0, std::string("bad message: ") + e.what()}});
    return true;
  }
  if (std::holds_alternative<TrainingComplete>(m.body)) return false;
  const std::uint32_t round = m.round();
  try {
    const auto* task = std::get_if<TaskAssignment>(&m.body);
    if (!task) throw Error(ErrorCode::kProtocol, "collaborator expected a task assignment");
    transport.send(kAggregatorEndpoint, {site_id_, ModelUpdate{run_task(*task)}});
  } catch (const std::exception& e) {
    transport.send(kAggregatorEndpoint, {site_id_, CollaboratorFailure{round, e.what()}});
  }
  return true;
}

// ---- Scenarios ------------------------------------------------------------

FederationResult run_federated(const FederationConfig& config, const nn::NetworkSpec& spec,
                               const std::vector<dataset::SiteShard>& shards) {
  config.validate();
  spec.validate();
  check_shards(spec, shards);

  std::vector<const dataset::SiteShard*> ordered;
  for (const auto& s : shards) ordered.push_back(&s);
  std::sort(ordered.begin(), ordered.end(),
            [](auto* a, auto* b) { return a->site_id < b->site_id; });
  std::vector<int> site_ids;
  std::vector<Collaborator> collaborators;
  for (const auto* s : ordered) {
    site_ids.push_back(s->site_id);
    collaborators.emplace_back(s->site_id, spec, s->train, config.master_seed, config.train);
  }

  InProcessTransport transport(site_ids);
  Aggregator aggregator(nn::init_weights(spec), site_ids, config.rounds, config.weighting);
  std::unique_ptr<CollaboratorThreads> threads;
  if (config.parallel) threads = std::make_unique<CollaboratorThreads>(transport, collaborators);

  while (aggregator.phase() != Aggregator::Phase::kFinished) {
    const std::uint32_t round = aggregator.begin_round();
    for (int id : site_ids) {
      transport.send(id, {id, TaskAssignment{round, aggregator.global_weights(),
                                             static_cast<std::uint32_t>(config.epochs_per_round)}});
    }
    if (!config.parallel) {
      for (const auto& c : collaborators) c.serve_one(transport);
    }
    std::string failure;
    for (std::size_t i = 0; i < site_ids.size(); ++i) {
      Message m = transport.receive(kAggregatorEndpoint);
      if (auto* f = std::get_if<CollaboratorFailure>(&m.body)) {
        if (failure.empty()) {
          failure = "site " + std::to_string(m.site_id) + " failed in round " +
                    std::to_string(round) + ": " + f->reason;
        }
      } else if (auto* u = std::get_if<ModelUpdate>(&m.body)) {
        if (failure.empty()) aggregator.accept(std::move(u->update));
      } else {
        throw Error(ErrorCode::kProtocol, "unexpected message at the aggregator");
      }
    }
    if (!failure.empty()) throw Error(ErrorCode::kCollaborator, failure);
    aggregator.complete_round();
  }

  if (threads) {
    threads->finish(aggregator.global_weights(), aggregator.current_round());
  } else {
    for (const auto& c : collaborators) {
      transport.send(c.site_id(), {c.site_id(), TrainingComplete{aggregator.current_round(),
                                                                 aggregator.global_weights()}});
      c.serve_one(transport);
    }
  }
  return {aggregator.global_weights(), aggregator.history(), aggregator.trace()};
}

int training_site_key(const dataset::PatchSet& data) {
  if (data.site_ids.empty()) return 0;
  const int first = data.site_ids.front();
  for (int s : data.site_ids) {
    if (s != first) return 0;
  }
  return first;
}

nn::TrainResult train_schedule(const FederationConfig& config, const nn::NetworkSpec& spec,
                               const dataset::PatchSet& data, int site_key) {
  config.validate();
  if (data.empty()) throw Error(ErrorCode::kInvalidArgument, "empty training set");
  nn::TrainResult out{nn::init_weights(spec), {}};
  for (int r = 0; r < config.rounds; ++r) {
    auto step = nn::train_epochs(spec, out.weights, data.view(), config.epochs_per_round,
                                 derive_seed(config.master_seed, site_key,
                                             static_cast<std::uint32_t>(r)),
                                 config.train);
    out.weights = std::move(step.weights);
    out.epoch_losses.insert(out.epoch_losses.end(), step.epoch_losses.begin(),
                            step.epoch_losses.end());
  }
  return out;
}

nn::TrainResult run_centralized(const FederationConfig& config, const nn::NetworkSpec& spec,
                                const dataset::PatchSet& pooled_train) {
  if (pooled_train.empty()) throw Error(ErrorCode::kInvalidArgument, "empty pooled training set");
  return train_schedule(config, spec, pooled_train, training_site_key(pooled_train));
}

std::map<int, nn::TrainResult> run_site_specific(const FederationConfig& config,
                                                 const nn::NetworkSpec& spec,
                                                 const std::vector<dataset::SiteShard>& shards) {
  config.validate();
  spec.validate();
  check_shards(spec, shards);
  std::vector<nn::TrainResult> results(shards.size());
  std::vector<std::exception_ptr> errors(shards.size());
  auto train_one = [&](std::size_t i) {
    try {
      results[i] = train_schedule(config, spec, shards[i].train, shards[i].site_id);
    } catch (const Error& e) {
      errors[i] = std::make_exception_ptr(
          Error(e.code(), "site " + std::to_string(shards[i].site_id) + ": " + e.what()));
    }
  };
  if (config.parallel) {
    std::vector<std::thread> workers;
    for (std::size_t i = 0; i < shards.size(); ++i) workers.emplace_back(train_one, i);
    for (auto& w : workers) w.join();
  } else {
    for (std::size_t i = 0; i < shards.size(); ++i) train_one(i);
  }
  std::map<int, nn::TrainResult> out;
  for (std::size_t i = 0; i < shards.size(); ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    out.emplace(shards[i].site_id, std::move(results[i]));
  }
  return out;
}

std::string history_csv(const std::vector<RoundRecord>& history) {
  std::string out = "round,mean_local_loss";
  if (!history.empty()) {
    for (const auto& [site, loss] : history.front().site_losses) {
      out += ",site_" + std::to_string(site);
    }
  }
  out += "\n";
  char buf[64];
  for (const auto& r : history) {
    out += std::to_string(r.round);
    std::snprintf(buf, sizeof buf, ",%.6f", r.mean_local_loss);
    out += buf;
    for (const auto& [site, loss] : r.site_losses) {
      std::snprintf(buf, sizeof buf, ",%.6f", loss);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace fedtil::federation
