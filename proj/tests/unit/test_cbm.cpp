#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "oracles/cos_cubed_oracle.hpp"
#include "oracles/finite_difference.hpp"
#include "support/generators.hpp"
#include "support/models.hpp"
#include "svct/cbm/backbone.hpp"
#include "svct/cbm/concepts.hpp"
#include "svct/cbm/final_layer.hpp"
#include "svct/cbm/model.hpp"
#include "svct/cbm/projection.hpp"
#include "svct/errors.hpp"

using namespace svct;
using namespace svct::cbm;
using svct::testing::Gen;
using svct::testing::random_backbone;
using svct::testing::random_model;

namespace {

Vector vec(std::initializer_list<double> xs) { return to_vector(std::vector<double>(xs)); }

}  // namespace

TEST(Backbone, ZeroInputZeroBiasGivesZero) {
  Gen g(1);
  BackboneParams p{g.normal_matrix(6, 4), Vector::Zero(6), g.normal_matrix(3, 6), Vector::Zero(3)};
  EXPECT_EQ(tiny_backbone(Vector::Zero(4), p), Vector::Zero(3));
}

TEST(Backbone, JacobianMatchesFiniteDifferences) {
  Gen g(2);
  for (int trial = 0; trial < 20; ++trial) {
    const TinyBackbone b(random_backbone(g, 5, 9, 4));
    const Vector x = g.normal_vector(5);
    const Matrix fd = oracle::fd_jacobian([&](const Vector& v) { return b.features(v); }, x, 1e-6);
    EXPECT_LT((b.jacobian(x) - fd).cwiseAbs().maxCoeff(), 1e-7);
    const Vector gvec = g.normal_vector(4);
    EXPECT_LT((b.vector_jacobian_product(x, gvec) - b.jacobian(x).transpose() * gvec).norm(), 1e-12);
  }
}

TEST(Backbone, LinearNearZero) {
  Gen g(3);
  BackboneParams p{g.normal_matrix(6, 4), Vector::Zero(6), g.normal_matrix(3, 6), Vector::Zero(3)};
  const TinyBackbone b(p);
  const Vector x = g.normal_vector(4);
  const double eps = 1e-5;
  const Vector lin = eps * b.jacobian(Vector::Zero(4)) * x;
  EXPECT_LT((b.features(eps * x) - lin).norm(), 1e-12);
}

TEST(Backbone, DeterministicAndGuarded) {
  Gen g(4);
  const TinyBackbone b(random_backbone(g, 3, 5, 2));
  const Vector x = g.normal_vector(3);
  const Vector a = b.features(x);
  const Vector c = b.features(x);
  EXPECT_EQ(std::memcmp(a.data(), c.data(), sizeof(double) * 2), 0);
  EXPECT_THROW(b.features(Vector::Zero(4)), ParameterError);
}

TEST(ConceptSetTest, RejectsDuplicateNamesAndNonUnitRows) {
  const Matrix e = Matrix::Identity(2, 2);
  EXPECT_THROW(ConceptSet({"a", "a"}, e), ParameterError);
  EXPECT_THROW(ConceptSet({"a", "b"}, 2.0 * e), ParameterError);
  EXPECT_NO_THROW(ConceptSet({"a", "b"}, e));
}

TEST(Activation, HandExampleAndShapes) {
  const Matrix images = Matrix::Identity(2, 2);
  Matrix text(2, 2);
  text << 1, 0, 1 / std::sqrt(2.0), 1 / std::sqrt(2.0);
  const Matrix a = activation_matrix(EmbeddingTable(images, Matrix::Zero(2, 3)), ConceptSet({"x", "y"}, text));
  EXPECT_NEAR(a(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(a(0, 1), 0.7071067811865475, 1e-15);
  EXPECT_NEAR(a(1, 0), 0.0, 1e-15);
  EXPECT_NEAR(a(1, 1), 0.7071067811865475, 1e-15);

  Matrix three = Matrix::Zero(3, 3);
  three(0, 0) = three(1, 1) = three(2, 2) = 1.0;
  const Matrix b = activation_matrix(three, ConceptSet({"p", "q"}, three.topRows(2)));
  EXPECT_EQ(b.rows(), 3);
  EXPECT_EQ(b.cols(), 2);
  EXPECT_EQ(b.topRows(2), Matrix::Identity(2, 2));
}

TEST(Filter, LengthClassAndDuplicateRules) {
  // Five orthogonal directions plus one near-duplicate of "wing".
  Matrix text = Matrix::Zero(6, 6);
  text(0, 0) = 1;                                 // 41-character name
  text(1, 1) = 1;                                 // equals a class embedding
  text(2, 2) = 1;                                 // wing
  text(3, 2) = 0.95, text(3, 3) = std::sqrt(1 - 0.95 * 0.95);  // cos 0.95 with wing
  text(4, 4) = 1;                                 // weak activation
  text(5, 5) = 1;                                 // survives
  const std::vector<std::string> names{std::string(41, 'x'), "sparrow-like", "wing", "wing shape", "rare", "beak"};
  const ConceptSet candidates(names, text);
  Matrix classes = Matrix::Zero(1, 6);
  classes(0, 1) = 1;
  Matrix act = Matrix::Constant(10, 6, 0.5);
  act.col(4).setConstant(0.1);
  const auto out = filter_concepts(candidates, classes, act);
  EXPECT_EQ(out.kept, (std::vector<Index>{2, 5}));
  EXPECT_EQ(out.concepts.names, (std::vector<std::string>{"wing", "beak"}));

  // A 40-character name is still allowed.
  const ConceptSet forty({std::string(40, 'y'), "z"}, Matrix::Identity(2, 2));
  EXPECT_EQ(filter_concepts(forty, Matrix(0, 2), Matrix::Constant(5, 2, 0.5)).kept, (std::vector<Index>{0, 1}));
}

TEST(Filter, EverythingFilteredIsAnError) {
  const ConceptSet c({"a", "b"}, Matrix::Identity(2, 2));
  EXPECT_THROW(filter_concepts(c, Matrix(0, 2), Matrix::Constant(5, 2, 0.1)), EmptyConceptSetError);
  FilterCutoffs bad;
  bad.class_similarity = 1.5;
  EXPECT_THROW(filter_concepts(c, Matrix(0, 2), Matrix::Constant(5, 2, 0.5), bad), ParameterError);
}

TEST(CosCubed, Examples) {
  const Vector q = vec({1, 2, 3});
  EXPECT_NEAR(cos_cubed(q, q), 1.0, 1e-15);
  EXPECT_NEAR(cos_cubed(q, vec({3, 2, 1})), -1.0, 1e-15);
  const double expected = oracle::cos_cubed_scalar({1, 0, 0}, {0, 0, 1});
  EXPECT_NEAR(cos_cubed(vec({1, 0, 0}), vec({0, 0, 1})), expected, 1e-15);
  EXPECT_NEAR(expected, -1.875 / 8.25, 1e-12);
  EXPECT_THROW(cos_cubed(vec({1, 1, 1}), q), DegenerateInputError);
}

TEST(CosCubed, PropertyMatchesScalarOracleAndGradient) {
  Gen g(5);
  for (int trial = 0; trial < 300; ++trial) {
    const Index n = g.integer(3, 30);
    const Vector q = g.normal_vector(n);
    const Vector a = g.normal_vector(n);
    ASSERT_NEAR(cos_cubed(q, a), oracle::cos_cubed_scalar(to_std(q), to_std(a)), 1e-12);
    const Vector fd = oracle::fd_gradient([&](const Vector& v) { return cos_cubed(v, a); }, q, 1e-6);
    ASSERT_LT((cos_cubed_gradient(q, a) - fd).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Projection, ZeroStepsReturnsInitialization) {
  Gen g(6);
  const Matrix f = g.normal_matrix(50, 4);
  const Matrix a = g.normal_matrix(50, 3);
  ProjectionOptions opt;
  opt.steps = 0;
  const auto init = initial_projection(3, 4, 99);
  const auto out = learn_projection(f, a, opt, &init);
  EXPECT_EQ(out.weights.w, init.w);
}

TEST(Projection, RecoversPlantedConcepts) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Gen g(100 + seed);
    const Matrix f = g.normal_matrix(512, 8);
    const Matrix planted = g.normal_matrix(4, 8);
    const Matrix a = f * planted.transpose();
    ProjectionOptions opt;
    opt.seed = seed;
    const auto out = learn_projection(f, a, opt);
    EXPECT_GE(out.similarities.minCoeff(), 0.95) << "seed " << seed;
    EXPECT_EQ(out.loss_increases, 0u);
    EXPECT_LT(out.loss_history.back(), out.loss_history.front());
  }
}

TEST(Projection, DropUninterpretable) {
  const ProjectionWeights w{Matrix::Identity(2, 3)};
  EXPECT_EQ(drop_uninterpretable(w, vec({1.0, 1.0})).first.w, w.w);
  const auto [kept_w, kept] = drop_uninterpretable(w, vec({0.9, 0.1}));
  EXPECT_EQ(kept, (std::vector<Index>{0}));
  EXPECT_EQ(kept_w.w, w.w.topRows(1));
  EXPECT_THROW(drop_uninterpretable(w, vec({0.1, 0.2})), EmptyConceptSetError);
}

TEST(ConceptFeatures, Examples) {
  const Vector f = vec({1.5, -2.0, 0.25});
  EXPECT_EQ(concept_features({Matrix::Identity(3, 3)}, f).values, f);
  EXPECT_EQ(concept_features({Matrix::Zero(2, 3)}, f).values, Vector::Zero(2));
  Matrix w(2, 2);
  w << 1, 2, 3, 4;
  EXPECT_EQ(concept_features({w}, vec({5, 6})).values, vec({17, 39}));
  EXPECT_THROW(concept_features({w}, f), ParameterError);
}

TEST(Fuse, Layout) {
  const auto fused = fuse(vec({1, 2, 3}), ConceptVector(vec({4, 5})));
  EXPECT_EQ(fused.values.size(), 5);
  EXPECT_EQ(fused.values.head(3), vec({1, 2, 3}));
  EXPECT_EQ(fuse(vec({1, 2}), ConceptVector(vec({3}))).values, vec({1, 2, 3}));
}

TEST(Predict, Examples) {
  FinalLayerWeights zero{Matrix::Zero(4, 3), Vector::Zero(4)};
  const auto u = predict(zero, vec({1, 2, 3}));
  for (Index i = 0; i < 4; ++i) EXPECT_NEAR(u.probs(i), 0.25, 1e-15);
  FinalLayerWeights two{Matrix::Zero(2, 1), vec({0.0, std::log(3.0)})};
  const auto p = predict(two, vec({7}));
  EXPECT_NEAR(p.probs(0), 0.25, 1e-15);
  EXPECT_NEAR(p.probs(1), 0.75, 1e-15);
  EXPECT_NEAR(p.probs.sum(), 1.0, 1e-15);
}

TEST(Intervene, IdentityLocalityAndForcedFlip) {
  const ConceptVector c(vec({0.1, 0.2, 0.3}));
  EXPECT_EQ(intervene(c, {}).values, c.values);
  const auto e = intervene(c, {{1, 5.0}});
  EXPECT_EQ(e.values(0), c.values(0));
  EXPECT_EQ(e.values(1), 5.0);
  EXPECT_EQ(e.values(2), c.values(2));
  EXPECT_THROW(intervene(c, {{3, 1.0}}), ParameterError);

  // Class 1 reads only concept 2 with a large weight; class 0 has a head start.
  FinalLayerWeights head{Matrix::Zero(2, 4), vec({1.0, 0.0})};
  head.w(1, 3) = 10.0;
  const Vector f = vec({0.5});
  const ConceptVector before(vec({0.0, 0.0, 0.0}));
  EXPECT_EQ(predict(head, fuse(f, before)).top_class(), 0);
  EXPECT_EQ(predict(head, fuse(f, intervene(before, {{2, 1.0}}))).top_class(), 1);
}

TEST(FinalLayer, HugeLambdaGivesAllZeroWeights) {
  Gen g(7);
  const Matrix x = g.normal_matrix(60, 5);
  std::vector<Index> y;
  for (Index i = 0; i < 60; ++i) y.push_back(x(i, 0) > 0 ? 1 : 0);
  const auto r = train_final_layer(x, y, 2, {10.0, 200});
  EXPECT_EQ(r.weights.nonzeros(), 0);
  EXPECT_EQ(r.sparsity, 1.0);
}

TEST(FinalLayer, UnregularizedMatchesIndependentFit) {
  Gen g(8);
  const Index n = 300;
  Matrix x = g.normal_matrix(n, 3);
  std::vector<Index> y;
  for (Index i = 0; i < n; ++i) {
    const Index c = i % 3;
    y.push_back(c);
    x(i, c) += 3.0;
  }
  const auto r = train_final_layer(x, y, 3, {0.0, 2000});
  // Independent plain gradient descent on raw features.
  Matrix w = Matrix::Zero(3, 3);
  Vector b = Vector::Zero(3);
  for (int it = 0; it < 3000; ++it) {
    Matrix gw = Matrix::Zero(3, 3);
    Vector gb = Vector::Zero(3);
    for (Index i = 0; i < n; ++i) {
      Vector s = w * x.row(i).transpose() + b;
      s = (s.array() - s.maxCoeff()).exp();
      s /= s.sum();
      s(y[static_cast<std::size_t>(i)]) -= 1.0;
      gw += s * x.row(i);
      gb += s;
    }
    w -= 0.1 * gw / n;
    b -= 0.1 * gb / n;
  }
  std::size_t ours = 0, theirs = 0;
  for (Index i = 0; i < n; ++i) {
    ours += argmax(logits(r.weights, x.row(i).transpose())) == y[static_cast<std::size_t>(i)];
    theirs += argmax(Vector(w * x.row(i).transpose() + b)) == y[static_cast<std::size_t>(i)];
  }
  EXPECT_GE(static_cast<double>(ours) / n, static_cast<double>(theirs) / n - 0.01);
}

TEST(FinalLayer, SparsityWeaklyDecreasesAlongLambdaGrid) {
  Gen g(9);
  const Matrix x = g.normal_matrix(200, 12);
  std::vector<Index> y;
  for (Index i = 0; i < 200; ++i) y.push_back(x(i, 0) + 0.5 * x(i, 1) > 0 ? 1 : (x(i, 2) > 0.5 ? 2 : 0));
  Index prev = 3 * 12 + 1;
  for (double lam : {0.0, 0.0007, 0.007, 0.07, 0.7}) {
    const Index nz = train_final_layer(x, y, 3, {lam, 1000}).weights.nonzeros();
    EXPECT_LE(nz, prev) << "lambda " << lam;
    prev = nz;
  }
  EXPECT_EQ(prev, 0);
}

TEST(FinalLayer, InputGuards) {
  const Matrix x = Matrix::Ones(4, 2);
  EXPECT_THROW(train_final_layer(x, {0, 0, 0, 0}, 2), ParameterError);
  EXPECT_THROW(train_final_layer(x, {0, 1, 2, 0}, 2), ParameterError);
  EXPECT_THROW(train_final_layer(x, {0, 1}, 2), ParameterError);
}

TEST(Model, DimensionChainAndGradient) {
  Gen g(10);
  for (int trial = 0; trial < 10; ++trial) {
    const auto model = random_model(g, 6, 5, 4, 3);
    const Vector x = g.uniform_vector(6, 0.0, 1.0);
    EXPECT_EQ(model.concepts(x).size(), 4);
    EXPECT_EQ(model.fused(x).values.size(), 9);
    EXPECT_EQ(model.predict(x).size(), 3);
    const Index label = g.integer(0, 2);
    const Vector fd = oracle::fd_gradient([&](const Vector& v) { return model.loss(v, label); }, x, 1e-6);
    const Vector an = model.input_gradient(x, label);
    EXPECT_LT((an - fd).cwiseAbs().maxCoeff() / std::max(1.0, an.cwiseAbs().maxCoeff()), 1e-7);
  }
  EXPECT_THROW(ConceptModel(TinyBackbone(random_backbone(g, 3, 4, 2)), {Matrix::Zero(2, 3)},
                            {Matrix::Zero(2, 4), Vector::Zero(2)}, {"a", "b"}),
               ParameterError);
}
