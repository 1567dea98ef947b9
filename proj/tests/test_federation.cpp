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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedtil/dataset.hpp"
#include "fedtil/error.hpp"
#include "fedtil/federation.hpp"
#include "fedtil/random.hpp"
#include "fedtil/serialize.hpp"
#include "test_util.hpp"

using namespace fedtil;
using namespace fedtil::federation;

namespace {

nn::ModelWeights single(std::vector<float> values) {
  nn::ModelWeights w;
  w.layers.push_back({"p", {static_cast<std::uint32_t>(values.size())}, std::move(values)});
  return w;
}

RoundUpdate update(int site, std::uint32_t round, nn::ModelWeights w, std::uint64_t n) {
  return {site, round, std::move(w), n, 0.0};
}

nn::ModelWeights random_like(Rng& rng, const nn::ModelWeights& like) {
  auto w = like;
  for (auto& t : w.layers) {
    for (auto& v : t.values) v = static_cast<float>(uniform(rng, -2.0, 2.0));
  }
  return w;
}

nn::NetworkSpec small_spec() {
  nn::NetworkSpec spec;
  spec.input_side = 16;
  spec.blocks = {{4, 1}, {8, 1}};
  spec.seed = 3;
  return spec;
}

std::vector<dataset::SiteShard> small_shards(int k, int side = 16) {
  std::vector<dataset::SiteShard> shards;
  for (int id = 1; id <= k; ++id) {
    dataset::SiteProfile p;
    p.site_id = id;
    p.patch_side = side;
    p.n_patients_train = 2;
    p.n_patches_train = 10 + 3 * id;
    p.n_patients_validation = 1;
    p.n_patches_validation = 6;
    p.texture_shift = {0.05 * id - 0.1, 0.0, 0.02};
    p.seed = 77 + id;
    shards.push_back(dataset::generate_site(p));
  }
  return shards;
}

FederationConfig small_config(int rounds, int epochs) {
  FederationConfig c;
  c.rounds = rounds;
  c.epochs_per_round = epochs;
  c.master_seed = 11;
  c.train.batch_size = 4;
  return c;
}

}  // namespace

TEST_SUITE("federation") {

TEST_CASE("aggregate examples") {
  std::vector<RoundUpdate> two{update(1, 0, single({1, 3}), 5), update(2, 0, single({3, 1}), 9)};
  CHECK(aggregate(two, Weighting::kUniform).layers[0].values == std::vector<float>{2, 2});

  std::vector<RoundUpdate> sized{update(1, 0, single({0}), 1), update(2, 0, single({4}), 3)};
  CHECK(aggregate(sized, Weighting::kBySampleCount).layers[0].values[0] == 3.0f);

  Rng rng(1);
  const auto w = random_like(rng, nn::init_weights(nn::NetworkSpec{}));
  std::vector<RoundUpdate> one{update(4, 2, w, 17)};
  CHECK(nn::bitwise_equal(aggregate(one, Weighting::kUniform), w));
  CHECK(nn::bitwise_equal(aggregate(one, Weighting::kBySampleCount), w));
}

TEST_CASE("aggregate rejects bad inputs") {
  std::vector<RoundUpdate> none;
  CHECK_THROWS_AS(aggregate(none, Weighting::kUniform), Error);
  std::vector<RoundUpdate> mixed{update(1, 0, single({1}), 1), update(2, 1, single({1}), 1)};
  try {
    aggregate(mixed, Weighting::kUniform);
    FAIL("expected a protocol error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kProtocol);
  }
  std::vector<RoundUpdate> shapes{update(1, 0, single({1}), 1), update(2, 0, single({1, 2}), 1)};
  CHECK_THROWS_AS(aggregate(shapes, Weighting::kUniform), Error);
  std::vector<RoundUpdate> dup{update(1, 0, single({1}), 1), update(1, 0, single({1}), 1)};
  CHECK_THROWS_AS(aggregate(dup, Weighting::kUniform), Error);
}

TEST_CASE("aggregate matches an extended-precision weighted mean") {
  Rng rng(2);
  const auto like = nn::init_weights(small_spec());
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 1 + static_cast<int>(uniform_index(rng, 8));
    std::vector<RoundUpdate> ups;
    for (int s = 1; s <= k; ++s) {
      ups.push_back(update(s, 0, random_like(rng, like), 1 + uniform_index(rng, 1000)));
    }
    for (auto weighting : {Weighting::kUniform, Weighting::kBySampleCount}) {
      const auto got = aggregate(ups, weighting);
      long double total = 0;
      for (const auto& u : ups) total += weighting == Weighting::kUniform ? 1.0L : u.n_train_samples;
      for (std::size_t l = 0; l < like.layers.size(); ++l) {
        for (std::size_t j = 0; j < like.layers[l].values.size(); ++j) {
          long double acc = 0;
          for (const auto& u : ups) {
            const long double wi = weighting == Weighting::kUniform ? 1.0L : u.n_train_samples;
            acc += wi * u.weights.layers[l].values[j];
          }
          const float expected = static_cast<float>(acc / total);
          const float actual = got.layers[l].values[j];
          CHECK(std::abs(actual - expected) <= std::abs(expected) * 1.2e-7f + 1e-37f);
        }
      }
    }
  }
}

TEST_CASE("training_site_key and seeds") {
  const auto shards = small_shards(2);
  CHECK(training_site_key(shards[1].train) == 2);
  CHECK(training_site_key(dataset::pool_shards(shards).first) == 0);
  CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 2, 4));
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 3));
  CHECK(derive_seed(1, 2, 3) != derive_seed(2, 2, 3));
}

TEST_CASE("message header layout") {
  const Message m{5, TaskAssignment{7, single({1.0f}), 2}};
  const auto bytes = encode_message(m);
  REQUIRE(bytes.size() > 13);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "FSHM");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == 1);  // task assignment
  CHECK(bytes[7] == 7);
  CHECK(bytes[8] == 0);
  CHECK(bytes[11] == 5);
  CHECK(bytes[12] == 0);
  CHECK(bytes[13] == 2);  // epochs
  const auto weights = encode_weights(single({1.0f}));
  CHECK(std::equal(weights.begin(), weights.end(), bytes.end() - static_cast<long>(weights.size())));
}

TEST_CASE("messages round-trip") {
  Rng rng(3);
  const auto w = random_like(rng, nn::init_weights(small_spec()));
  const std::vector<Message> all{
      {2, TaskAssignment{4, w, 3}},
      {3, ModelUpdate{RoundUpdate{3, 4, w, 123456789012ULL, 0.6931}}},
      {1, TrainingComplete{30, w}},
      {8, CollaboratorFailure{9, "empty training set"}},
  };
  for (const auto& m : all) {
    const auto bytes = encode_message(m);
    const auto back = decode_message(bytes);
    CHECK(back.site_id == m.site_id);
    CHECK(back.type() == m.type());
    CHECK(back.round() == m.round());
    CHECK(encode_message(back) == bytes);
  }
  const auto u = decode_message(encode_message(all[1]));
  const auto& ru = std::get<ModelUpdate>(u.body).update;
  CHECK(ru.n_train_samples == 123456789012ULL);
  CHECK(ru.local_train_loss == 0.6931);
  CHECK(nn::bitwise_equal(ru.weights, w));
  CHECK(std::get<CollaboratorFailure>(decode_message(encode_message(all[3])).body).reason ==
        "empty training set");
}

TEST_CASE("damaged messages are rejected") {
  const auto bytes = encode_message({2, TaskAssignment{1, single({1, 2, 3}), 1}});
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    CHECK_THROWS_AS(decode_message(std::span(bytes.data(), n)), ParseError);
  }
  auto bad_type = bytes;
  bad_type[6] = 9;
  CHECK_THROWS_AS(decode_message(bad_type), ParseError);
  auto bad_version = bytes;
  bad_version[4] = 3;
  try {
    decode_message(bad_version);
    FAIL("expected a version error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kVersion);
  }
  auto trailing = bytes;
  trailing.push_back(1);
  CHECK_THROWS_AS(decode_message(trailing), ParseError);
}

TEST_CASE("transport delivers in FIFO order per endpoint") {
  InProcessTransport t({1, 2});
  t.send(1, {1, TaskAssignment{0, single({1}), 1}});
  t.send(1, {1, TaskAssignment{1, single({1}), 1}});
  t.send(kAggregatorEndpoint, {2, CollaboratorFailure{0, "x"}});
  CHECK(t.receive(1).round() == 0);
  CHECK(t.receive(1).round() == 1);
  CHECK(t.receive(kAggregatorEndpoint).site_id == 2);
  CHECK_THROWS_AS(t.send(3, {3, CollaboratorFailure{0, "x"}}), Error);
}

TEST_CASE("aggregator state machine") {
  Aggregator agg(single({0, 0}), {1, 2}, 2, Weighting::kUniform);
  CHECK(agg.phase() == Aggregator::Phase::kIdle);
  CHECK_THROWS_AS(agg.accept(update(1, 0, single({1, 1}), 1)), Error);
  CHECK(agg.begin_round() == 0);
  CHECK(agg.phase() == Aggregator::Phase::kWaitingForUpdates);
  CHECK_THROWS_AS(agg.begin_round(), Error);
  CHECK_THROWS_AS(agg.accept(update(1, 1, single({1, 1}), 1)), Error);   // wrong round
  CHECK_THROWS_AS(agg.accept(update(9, 0, single({1, 1}), 1)), Error);   // unknown site
  CHECK_THROWS_AS(agg.accept(update(1, 0, single({1}), 1)), Error);      // layout
  CHECK_THROWS_AS(agg.accept(update(1, 0, single({1, 1}), 0)), Error);   // no samples
  agg.accept(update(2, 0, single({3, 3}), 1));
  CHECK_THROWS_AS(agg.accept(update(2, 0, single({3, 3}), 1)), Error);   // duplicate
  CHECK_FALSE(agg.round_complete());
  try {
    agg.complete_round();
    FAIL("aggregated with a missing site");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kProtocol);
  }
  agg.accept(update(1, 0, single({1, 1}), 1));
  CHECK(agg.round_complete());
  CHECK(agg.complete_round().layers[0].values == std::vector<float>{2, 2});
  CHECK(agg.phase() == Aggregator::Phase::kIdle);
  CHECK(agg.begin_round() == 1);
  agg.accept(update(1, 1, single({0, 0}), 1));
  agg.accept(update(2, 1, single({0, 0}), 1));
  agg.complete_round();
  CHECK(agg.phase() == Aggregator::Phase::kFinished);
  CHECK_THROWS_AS(agg.begin_round(), Error);
  CHECK(agg.history().size() == 2);
}

TEST_CASE("collaborator reports failure instead of crashing") {
  const auto spec = small_spec();
  dataset::PatchSet empty;
  empty.side = 16;
  empty.channels = 3;
  Collaborator c(4, spec, empty, 1, {});
  InProcessTransport t({4});
  t.send(4, {4, TaskAssignment{0, nn::init_weights(spec), 1}});
  CHECK(c.serve_one(t));
  const auto reply = t.receive(kAggregatorEndpoint);
  CHECK(reply.type() == MessageType::kCollaboratorFailure);
  CHECK(reply.site_id == 4);
  t.send(4, {4, TrainingComplete{1, nn::init_weights(spec)}});
  CHECK_FALSE(c.serve_one(t));
}

TEST_CASE("run_federated validates its inputs") {
  const auto spec = small_spec();
  auto shards = small_shards(2);
  CHECK_THROWS_AS(run_federated(small_config(0, 1), spec, shards), Error);
  CHECK_THROWS_AS(run_federated(small_config(1, 0), spec, shards), Error);
  CHECK_THROWS_AS(run_federated(small_config(1, 1), spec, {}), Error);
  shards[1].train = dataset::PatchSet{};
  try {
    run_federated(small_config(1, 1), spec, shards);
    FAIL("expected a collaborator error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("site 2") != std::string::npos);
  }
  CHECK_THROWS_AS(run_federated(small_config(1, 1), nn::NetworkSpec{}, small_shards(1)), Error);
}

TEST_CASE("one round unrolls to an aggregate of locally trained models") {
  const auto spec = small_spec();
  const auto shards = small_shards(3);
  auto cfg = small_config(1, 1);
  const auto result = run_federated(cfg, spec, shards);
  std::vector<RoundUpdate> ups;
  for (const auto& s : shards) {
    const auto local = nn::train_epochs(spec, nn::init_weights(spec), s.train.view(), 1,
                                        derive_seed(cfg.master_seed, s.site_id, 0), cfg.train);
    ups.push_back(update(s.site_id, 0, local.weights, s.train.size()));
  }
  CHECK(nn::bitwise_equal(result.consensus, aggregate(ups, Weighting::kBySampleCount)));
  REQUIRE(result.history.size() == 1);
  CHECK(result.history[0].site_losses.size() == 3);
}

TEST_CASE("single-site federation equals centralized training") {
  const auto spec = small_spec();
  const auto shards = small_shards(1);
  const auto cfg = small_config(3, 2);
  const auto fed = run_federated(cfg, spec, shards);
  const auto cen = run_centralized(cfg, spec, dataset::pool_shards(shards).first);
  CHECK(nn::bitwise_equal(fed.consensus, cen.weights));
  const auto site = run_site_specific(cfg, spec, shards);
  CHECK(nn::bitwise_equal(site.at(1).weights, cen.weights));
}

TEST_CASE("parallel collaborators match sequential ones bitwise") {
  const auto spec = small_spec();
  const auto shards = small_shards(4);
  auto cfg = small_config(3, 1);
  const auto seq = run_federated(cfg, spec, shards);
  cfg.parallel = true;
  const auto par = run_federated(cfg, spec, shards);
  CHECK(nn::bitwise_equal(seq.consensus, par.consensus));
  CHECK(history_csv(seq.history) == history_csv(par.history));

  // Shard order does not matter either.
  auto reversed = shards;
  std::reverse(reversed.begin(), reversed.end());
  CHECK(nn::bitwise_equal(run_federated(cfg, spec, reversed).consensus, seq.consensus));

  cfg.parallel = false;
  const auto s1 = run_site_specific(cfg, spec, shards);
  cfg.parallel = true;
  const auto s2 = run_site_specific(cfg, spec, shards);
  for (const auto& [id, r] : s1) CHECK(nn::bitwise_equal(r.weights, s2.at(id).weights));
}

TEST_CASE("trace never aggregates before every update of the round") {
  const auto spec = small_spec();
  const auto shards = small_shards(3);
  auto cfg = small_config(4, 1);
  cfg.parallel = true;
  const auto result = run_federated(cfg, spec, shards);
  std::set<int> got;
  std::uint32_t round = 0;
  bool open = false;
  int aggregates = 0;
  for (const auto& e : result.trace) {
    switch (e.kind) {
      case TraceEvent::kBeginRound:
        CHECK_FALSE(open);
        CHECK(e.round == round);
        open = true;
        got.clear();
        break;
      case TraceEvent::kAccept:
        CHECK(open);
        CHECK(e.round == round);
        got.insert(e.site_id);
        break;
      case TraceEvent::kAggregate:
        CHECK(open);
        CHECK(got == std::set<int>{1, 2, 3});
        open = false;
        ++round;
        ++aggregates;
        break;
      case TraceEvent::kFinish:
        CHECK(round == 4);
        break;
    }
  }
  CHECK(aggregates == 4);
  CHECK(result.trace.back().kind == TraceEvent::kFinish);
}

TEST_CASE("site-specific models differ and centralized training reduces loss") {
  const auto spec = small_spec();
  const auto shards = small_shards(3);
  const auto cfg = small_config(4, 1);
  const auto models = run_site_specific(cfg, spec, shards);
  REQUIRE(models.size() == 3);
  CHECK_FALSE(nn::bitwise_equal(models.at(1).weights, models.at(2).weights));
  CHECK_FALSE(nn::bitwise_equal(models.at(2).weights, models.at(3).weights));
  CHECK_FALSE(nn::bitwise_equal(models.at(1).weights, models.at(3).weights));

  const auto pooled = dataset::pool_shards(shards).first;
  const auto a = run_centralized(cfg, spec, pooled);
  const auto b = run_centralized(cfg, spec, pooled);
  CHECK(nn::bitwise_equal(a.weights, b.weights));
  CHECK(a.epoch_losses.back() < a.epoch_losses.front());
  CHECK_THROWS_AS(run_centralized(cfg, spec, dataset::PatchSet{}), Error);
}

TEST_CASE("history CSV") {
  const auto result = run_federated(small_config(2, 1), small_spec(), small_shards(2));
  const auto csv = history_csv(result.history);
  CHECK(csv.rfind("round,mean_local_loss,site_1,site_2\n0,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

}  // TEST_SUITE
