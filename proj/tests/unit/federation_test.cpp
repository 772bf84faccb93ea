#include <gtest/gtest.h>

#include <cmath>

#include "fedta/federation.hpp"
#include "generators.hpp"
#include "oracles.hpp"

using namespace fedta;

namespace {

FrozenEncoderSpec toy_spec() {
  FrozenEncoderSpec s;
  s.seed = 11;
  s.raw_dim = 6;
  s.embed_dim = 5;
  s.hidden_dim = 7;
  s.num_base_tokens = 2;
  return s;
}

Vec mean_for(int label) {
  Rng rng(1000 + static_cast<std::uint64_t>(label));
  return gen::vec(rng, 6);
}

Dataset blobs(std::size_t classes, std::size_t per_class, std::uint64_t seed, int first_label = 0) {
  Rng rng(seed);
  Dataset out;
  std::vector<Vec> means;
  for (std::size_t c = 0; c < classes; ++c) means.push_back(mean_for(first_label + static_cast<int>(c)));
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t c = 0; c < classes; ++c) {
      Vec x = means[c];
      const Vec n = gen::vec(rng, 6, 0.05);
      for (std::size_t k = 0; k < 6; ++k) x[k] += n[k];
      out.push_back({static_cast<std::int64_t>(out.size()), first_label + static_cast<int>(c), x});
    }
  }
  return out;
}

ClientConfig small_client_config(Method method = Method::kFedTA) {
  ClientConfig c;
  c.method = method;
  c.base_size = 4;
  c.tokens_per_ie = 1;
  c.anchor_pool = 6;
  c.stage1.epochs = 1;
  c.stage1.batch_size = 4;
  c.stage2.epochs = 2;
  c.stage2.batch_size = 4;
  return c;
}

}  // namespace

TEST(MethodNames, RoundTrip) {
  for (Method m : {Method::kFedTA, Method::kNoTailAnchor, Method::kNoFusion, Method::kNoPrototypeSelection,
                   Method::kFedAvgHead, Method::kFrozenHead}) {
    EXPECT_EQ(method_from_string(to_string(m)), m);
  }
  EXPECT_THROW(method_from_string("fedprox"), std::invalid_argument);
}

TEST(Distillation, GradientsMatchFiniteDifferences) {
  const RandomFeatureEncoder enc(toy_spec());
  Rng rng(61);
  for (int trial = 0; trial < 20; ++trial) {
    const KnowledgeBase student = gen::knowledge_base(rng, 4, 2, 5);
    const Vec raw = gen::vec(rng, 6);
    std::vector<Vec> teachers{gen::vec(rng, 5), gen::vec(rng, 5)};
    const double kw = gen::uniform_real(rng, 0.0, 1.0);
    const auto g = distillation_loss_and_grads(student, raw, teachers, enc, 2, kw);
    const std::vector<std::size_t> sel = g.selected;
    for (std::size_t s = 0; s < sel.size(); ++s) {
      const std::size_t e = sel[s];
      const auto tokens = [&](const Vec& x) {
        KnowledgeBase kb = student;
        kb.entries[e].tokens.data = x;
        return distillation_loss_and_grads(kb, raw, teachers, enc, 2, kw, sel).loss;
      };
      EXPECT_LT(finite_difference_check(tokens, student.entries[e].tokens.data, g.token_grads[s].data, 1e-6),
                1e-4);
      const auto key = [&](const Vec& x) {
        KnowledgeBase kb = student;
        kb.entries[e].key = x;
        return distillation_loss_and_grads(kb, raw, teachers, enc, 2, kw, sel).loss;
      };
      EXPECT_LT(finite_difference_check(key, student.entries[e].key, g.key_grads[s], 1e-6), 1e-4);
    }
  }
}

TEST(Distillation, ZeroAgainstIdenticalTeachers) {
  const RandomFeatureEncoder enc(toy_spec());
  Rng rng(62);
  const KnowledgeBase kb = gen::knowledge_base(rng, 4, 2, 5);
  const Dataset s = blobs(2, 3, 1);
  EXPECT_DOUBLE_EQ(distillation_loss(kb, {kb, kb, kb}, 0, s, enc, 2), 0.0);
  EXPECT_THROW(distillation_loss(kb, {kb}, 0, s, enc, 2), NumericError);
}

TEST(Fusion, LossDecreasesAgainstAFixedTeacher) {
  const RandomFeatureEncoder enc(toy_spec());
  Rng rng(63);
  const std::vector<KnowledgeBase> bases{gen::knowledge_base(rng, 4, 2, 5), gen::knowledge_base(rng, 4, 2, 5)};
  ServerConfig cfg;
  cfg.fusion_steps = 40;
  cfg.fusion_batch = 8;
  cfg.fusion_lr = 0.5;
  cfg.fusion_key_weight = 0.0;
  Rng frng(5);
  const FusionResult r = selective_input_knowledge_fusion(bases, blobs(3, 4, 2), enc, cfg, frng);
  ASSERT_EQ(r.loss_history.size(), cfg.fusion_steps + 1);
  EXPECT_LT(r.loss_history.back(), r.loss_history.front());
  EXPECT_LT(r.target, 2u);
  for (const auto& e : r.kb.entries) EXPECT_TRUE(e.frozen);
}

TEST(Fusion, SingleBaseIsCopiedAndRunIsSeeded) {
  const RandomFeatureEncoder enc(toy_spec());
  Rng rng(64);
  const std::vector<KnowledgeBase> bases{gen::knowledge_base(rng, 3, 1, 5), gen::knowledge_base(rng, 3, 1, 5),
                                         gen::knowledge_base(rng, 3, 1, 5)};
  ServerConfig cfg;
  cfg.fusion_steps = 5;
  Rng a(9), b(9), c(9);
  EXPECT_EQ(selective_input_knowledge_fusion({bases[0]}, {}, enc, cfg, a).kb, bases[0]);
  const Dataset s = blobs(2, 3, 3);
  EXPECT_EQ(selective_input_knowledge_fusion(bases, s, enc, cfg, b).kb,
            selective_input_knowledge_fusion(bases, s, enc, cfg, c).kb);
}

TEST(Fusion, AverageIsEntrywiseMean) {
  Rng rng(65);
  const auto a = gen::knowledge_base(rng, 3, 2, 4);
  const auto b = gen::knowledge_base(rng, 3, 2, 4);
  const auto avg = average_knowledge_bases({a, b});
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      EXPECT_DOUBLE_EQ(avg.entries[i].key[k], 0.5 * (a.entries[i].key[k] + b.entries[i].key[k]));
    }
    for (std::size_t k = 0; k < 8; ++k) {
      EXPECT_DOUBLE_EQ(avg.entries[i].tokens.data[k],
                       0.5 * (a.entries[i].tokens.data[k] + b.entries[i].tokens.data[k]));
    }
  }
}

TEST(SimilarityMatrix, ContiguousGroupsUnitSameClassSymmetric) {
  Rng rng(66);
  for (int trial = 0; trial < 50; ++trial) {
    const auto ups = gen::uploads(rng, 20, 6, 4);
    bool any = false;
    for (const auto& u : ups) any = any || !u.prototypes.empty();
    if (!any) continue;
    const auto m = build_similarity_matrix(ups);
    const std::size_t n = m.members.size();
    for (std::size_t i = 0; i < n; ++i) {
      if (i > 0) EXPECT_LE(m.members[i - 1].label, m.members[i].label);
      for (std::size_t j = 0; j < n; ++j) {
        EXPECT_EQ(m.values(i, j), m.values(j, i));
        if (m.members[i].label == m.members[j].label) {
          EXPECT_EQ(m.values(i, j), 1.0);
        } else {
          EXPECT_NEAR(m.values(i, j), oracle::cos_sim(m.members[i].vec, m.members[j].vec), 1e-12);
        }
      }
    }
    for (const auto& [label, range] : m.groups) {
      for (std::size_t i = range.first; i <= range.second; ++i) EXPECT_EQ(m.members[i].label, label);
    }
  }
}

TEST(Election, MatchesBruteForceOracle) {
  Rng rng(67);
  int checked = 0;
  while (checked < 200) {
    const auto ups = gen::uploads(rng, 20, 6, 4);
    bool any = false;
    for (const auto& u : ups) any = any || !u.prototypes.empty();
    if (!any) continue;
    GlobalPrototypes prior;
    if (gen::uniform(rng, 0, 1) == 1) {
      prior[0] = {gen::vec(rng, 4), true};
      prior[7] = {gen::vec(rng, 4), false};
    }
    const double thr = gen::uniform_real(rng, -0.2, 1.0);
    EXPECT_EQ(select_global_prototypes(build_similarity_matrix(ups), prior, thr), oracle::elect(ups, prior, thr));
    ++checked;
  }
}

TEST(Election, FixedIsAbsorbingAndThresholdIsStrict) {
  ClientUpdateMessage a, b;
  a.client_id = 0;
  b.client_id = 1;
  a.prototypes.set(0, Vec{1, 0});
  a.prototypes.set(1, Vec{0, 1});
  b.prototypes.set(0, Vec{1, 0});
  // Row means: class 0 members see {1, 1, 0}, class 1 sees {0, 0, 1} -> 1/3.
  const auto m = build_similarity_matrix({a, b});
  auto g = select_global_prototypes(m, {}, 1.0 / 3.0);
  EXPECT_FALSE(g.at(1).fixed);
  g = select_global_prototypes(m, {}, 0.34);
  EXPECT_TRUE(g.at(1).fixed);
  ClientUpdateMessage c;
  c.prototypes.set(1, Vec{5, 5});
  const auto later = select_global_prototypes(build_similarity_matrix({c}), g, 0.9);
  EXPECT_EQ(later.at(1), g.at(1));
}

TEST(Election, AverageAblationNeverFixes) {
  ClientUpdateMessage a, b;
  a.prototypes.set(2, Vec{1, 3});
  b.prototypes.set(2, Vec{3, 1});
  GlobalPrototypes prior;
  prior[5] = {Vec{1, 1}, true};
  const auto g = average_global_prototypes({a, b}, prior);
  EXPECT_EQ(g.at(2), (GlobalPrototype{Vec{2, 2}, false}));
  EXPECT_EQ(g.at(5), prior.at(5));
}

TEST(NearestPrototype, CosineArgmaxLowestLabelOnTies) {
  PrototypeTable t;
  t.set(3, Vec{1, 0});
  t.set(1, Vec{2, 0});
  t.set(2, Vec{0, 1});
  EXPECT_EQ(nearest_prototype(Vec{1, 0.1}, t), 1);
  EXPECT_EQ(nearest_prototype(Vec{0, 1}, t), 2);
  EXPECT_THROW(nearest_prototype(Vec{0, 1}, PrototypeTable{}), NumericError);
}

TEST(Client, TrainingFreezesStateAndUploadsPrototypesForTaskClasses) {
  const RandomFeatureEncoder enc(toy_spec());
  const ClientConfig cfg = small_client_config();
  ClientState st = ClientState::create(0, 4, 5, cfg, 17);
  const Dataset task = blobs(2, 6, 4);
  const auto msg = client_train_task(st, task, enc, cfg);
  EXPECT_EQ(st.task_cursor, 1u);
  for (const auto& e : st.kb.entries) EXPECT_TRUE(e.frozen);
  EXPECT_TRUE(st.ta_set.all_frozen());
  EXPECT_EQ(msg.prototypes.labels(), (std::vector<int>{0, 1}));
  EXPECT_EQ(msg.round, 0u);
  EXPECT_EQ(msg.kb, st.kb);
  EXPECT_THROW(client_train_task(st, {}, enc, cfg), NumericError);
}

TEST(Client, NoAnchorAblationLeavesAnchorsUntouched) {
  const RandomFeatureEncoder enc(toy_spec());
  const ClientConfig cfg = small_client_config(Method::kNoTailAnchor);
  ClientState st = ClientState::create(0, 4, 5, cfg, 17);
  const TailAnchorSet before = st.ta_set;
  client_train_task(st, blobs(2, 6, 4), enc, cfg);
  ASSERT_EQ(st.ta_set.size(), before.size());
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(st.ta_set.entries[i].anchor, before.entries[i].anchor);
}

TEST(Round, SameResultForAnyThreadCount) {
  const RandomFeatureEncoder enc(toy_spec());
  const std::vector<Dataset> tasks{blobs(2, 5, 1, 0), blobs(2, 5, 2, 2), blobs(2, 5, 3, 0)};
  const Dataset surrogate = blobs(4, 2, 4);
  auto run = [&](std::size_t threads) {
    RoundConfig rc;
    rc.client = small_client_config();
    rc.server.fusion_steps = 3;
    rc.server.seed = 99;
    rc.threads = threads;
    std::vector<ClientState> clients;
    for (int i = 0; i < 3; ++i) clients.push_back(ClientState::create(i, 4, 5, rc.client, 100 + i));
    ServerState server;
    const RoundReport rep = run_round(clients, server, tasks, surrogate, enc, rc);
    return std::make_pair(rep.global, clients[1].ta_set);
  };
  const auto one = run(1);
  const auto three = run(3);
  EXPECT_EQ(one.first, three.first);
  EXPECT_EQ(one.second, three.second);
  EXPECT_EQ(one.first.round, 0u);
  EXPECT_FALSE(one.first.prototypes.empty());
}

TEST(Round, ClientsReceiveGlobalState) {
  const RandomFeatureEncoder enc(toy_spec());
  const std::vector<Dataset> tasks{blobs(2, 5, 1, 0), blobs(2, 5, 2, 2)};
  RoundConfig rc;
  rc.client = small_client_config();
  rc.server.fusion_steps = 2;
  std::vector<ClientState> clients;
  for (int i = 0; i < 2; ++i) clients.push_back(ClientState::create(i, 4, 5, rc.client, 7 + i));
  ServerState server;
  std::vector<std::size_t> hooked;
  const auto rep = run_round(clients, server, tasks, blobs(4, 2, 9), enc, rc,
                             [&](std::size_t i, const ClientState&) { hooked.push_back(i); });
  EXPECT_EQ(hooked.size(), 2u);
  for (const auto& c : clients) {
    EXPECT_EQ(c.globals, rep.global.prototypes);
    EXPECT_EQ(c.task_cursor, 1u);
  }
  EXPECT_EQ(rep.global.prototypes.size(), 4u);
}

TEST(Inference, GlobalInferenceAgreesWithGlobalView) {
  const RandomFeatureEncoder enc(toy_spec());
  const std::vector<Dataset> tasks{blobs(2, 5, 1, 0), blobs(2, 5, 2, 2)};
  RoundConfig rc;
  rc.client = small_client_config();
  rc.server.fusion_steps = 2;
  std::vector<ClientState> clients;
  for (int i = 0; i < 2; ++i) clients.push_back(ClientState::create(i, 4, 5, rc.client, 7 + i));
  ServerState server;
  const auto rep = run_round(clients, server, tasks, blobs(4, 2, 9), enc, rc);
  const ModelView view = global_view(clients[0], rep.global, enc, rc.client);
  for (const auto& s : tasks[0]) {
    EXPECT_EQ(view.predict(s.features),
              global_inference(s, clients[0].ta_set, rep.global.kb, rep.global.prototypes, enc,
                               rc.client.stage1.top_n, rc.client.stage2.mix_alpha));
  }
}

TEST(Client, TaskSpansSeveralCommunicationRounds) {
  const RandomFeatureEncoder enc(toy_spec());
  const ClientConfig cfg = small_client_config();
  ClientState st = ClientState::create(0, 4, 5, cfg, 17);
  const Dataset task = blobs(2, 6, 4);
  const auto first = client_train_task(st, task, enc, cfg, false);
  EXPECT_EQ(first.round, 0u);
  EXPECT_EQ(st.task_cursor, 0u);
  EXPECT_EQ(st.comm_round, 1u);
  const auto second = client_train_task(st, task, enc, cfg, true);
  EXPECT_EQ(second.round, 1u);
  EXPECT_EQ(st.task_cursor, 1u);
  EXPECT_EQ(st.comm_round, 2u);
}
