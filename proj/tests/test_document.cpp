#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include "uccd/uccd.hpp"

using namespace uccd;
namespace fs = std::filesystem;

namespace {

const std::string kMinimal = R"({
  "schema": 1,
  "grid": {"t0": 0.0, "tf": 1.0, "n_nodes": 11},
  "dynamics": {"kind": "registry", "id": "scalar_linear"},
  "cost": {"lagrange": {"id": "min_energy"}},
  "boundary": {"xi0": [1.0]}
})";

std::string with(const std::string& base, const std::string& from, const std::string& to) {
  std::string s = base;
  auto at = s.find(from);
  EXPECT_NE(at, std::string::npos) << from;
  if (at != std::string::npos) s.replace(at, from.size(), to);
  return s;
}

DocumentError error_of(const std::string& text) {
  try {
    parse_document(text);
  } catch (const DocumentError& e) {
    return e;
  }
  ADD_FAILURE() << "document was accepted";
  return DocumentError("", "none");
}

}  // namespace

TEST(Document, MinimalDefaults) {
  Document d = parse_document(kMinimal);
  EXPECT_EQ(d.problem.grid.size(), 11u);
  EXPECT_EQ(d.problem.n_states(), 1);
  EXPECT_EQ(d.problem.n_controls(), 1);
  EXPECT_EQ(d.formulation.type, FormulationType::det);
  EXPECT_DOUBLE_EQ(d.solver.constraint_tol, 1e-6);
  EXPECT_TRUE(d.problem.bindings.empty());
}

TEST(Document, EverySampleParsesAndRoundTrips) {
  int count = 0;
  for (const auto& entry : fs::directory_iterator(UCCD_PROBLEMS_DIR)) {
    if (entry.path().extension() != ".json") continue;
    SCOPED_TRACE(entry.path().filename().string());
    Document d = parse_document(read_file(entry.path().string()));
    json once = to_json(d);
    Document again = build_document(once);
    EXPECT_EQ(to_json(again).dump(), once.dump());
    ++count;
  }
  EXPECT_GE(count, 8);
}

TEST(Document, MissingGridNamesPointer) {
  std::string text = with(kMinimal, R"("grid": {"t0": 0.0, "tf": 1.0, "n_nodes": 11},)", "");
  DocumentError e = error_of(text);
  EXPECT_EQ(e.pointer(), "/grid");
}

TEST(Document, UnknownFieldIsRejectedWithLine) {
  std::string text = with(kMinimal, R"("boundary": {"xi0": [1.0]})", R"("boundary": {"xi0": [1.0], "xf": [0.0]})");
  DocumentError e = error_of(text);
  EXPECT_EQ(e.pointer(), "/boundary/xf");
  EXPECT_EQ(e.line(), 6);
  EXPECT_NE(std::string(e.what()).find("line 6"), std::string::npos);
}

TEST(Document, SyntaxErrorReportsLine) {
  std::string text = with(kMinimal, R"("n_nodes": 11})", R"("n_nodes": 11,})");
  DocumentError e = error_of(text);
  EXPECT_EQ(e.line(), 3);
}

TEST(Document, SchemaVersionIsChecked) {
  DocumentError e = error_of(with(kMinimal, R"("schema": 1)", R"("schema": 2)"));
  EXPECT_EQ(e.pointer(), "/schema");
}

TEST(Document, NegativeSigmaRejected) {
  std::string text = with(kMinimal, R"("boundary": {"xi0": [1.0]})",
                          R"("boundary": {"xi0": [1.0]},
  "uncertainty": [{"target": "xi0[0]", "kind": "gaussian", "params": {"mu": 1.0, "sigma": -0.1}}])");
  DocumentError e = error_of(text);
  EXPECT_EQ(e.pointer().rfind("/uncertainty/0", 0), 0u) << e.pointer();
}

TEST(Document, DuplicateNamesRejected) {
  std::string text = with(kMinimal, R"("dynamics")", R"("statics": [{"name": "k"}],
  "data": {"constants": {"k": 1.0}},
  "dynamics")");
  DocumentError e = error_of(text);
  EXPECT_NE(std::string(e.what()).find("more than once"), std::string::npos);
}

TEST(Document, UnknownReferenceRejected) {
  std::string text = with(kMinimal, R"("id": "scalar_linear"})",
                          R"("id": "scalar_linear", "coefficients": {"a": "nowhere"}})");
  DocumentError e = error_of(text);
  EXPECT_EQ(e.pointer().rfind("/dynamics", 0), 0u) << e.pointer();
}

TEST(Document, FormulationParameters) {
  std::string text = with(kMinimal, R"("boundary": {"xi0": [1.0]})", R"("boundary": {"xi0": [1.0]},
  "formulation": {"type": "pr-w", "structure": "olmc",
                  "params": {"samples": 12, "seed": 4, "alpha_w": 0.3, "k_s": 2.0,
                             "solver": {"constraint_tol": 1e-8, "max_outer_iters": 7}}})");
  Document d = parse_document(text);
  EXPECT_EQ(d.formulation.type, FormulationType::pr_w);
  EXPECT_EQ(d.formulation.structure, ControlStructure::olmc);
  EXPECT_EQ(d.formulation.samples, 12);
  EXPECT_EQ(d.formulation.seed, 4u);
  EXPECT_DOUBLE_EQ(d.formulation.alpha_w, 0.3);
  EXPECT_DOUBLE_EQ(d.formulation.k_s, 2.0);
  EXPECT_DOUBLE_EQ(d.solver.constraint_tol, 1e-8);
  EXPECT_EQ(d.solver.max_outer_iters, 7);

  DocumentError bad = error_of(with(text, R"("alpha_w": 0.3)", R"("alpha_w": 1.3)"));
  EXPECT_EQ(bad.pointer(), "/formulation/params");
  DocumentError type = error_of(with(text, R"("type": "pr-w")", R"("type": "robust")"));
  EXPECT_EQ(type.pointer(), "/formulation/type");
}

TEST(Document, BoundsOrderChecked) {
  std::string text = with(kMinimal, R"("boundary")", R"("constraints": {"control_bounds": [[1.0, -1.0]]},
  "boundary")");
  DocumentError e = error_of(text);
  EXPECT_EQ(e.pointer(), "/constraints/control_bounds/0");
}
