#include <gtest/gtest.h>

#include "bcs/encoding.hpp"

using namespace bcs;

namespace {

RawTable sample_table() {
  return {{"age", ColumnKind::continuous, {"20", "30", "40", "50"}},
          {"smoker", ColumnKind::binary, {"0", "1", "1", "0"}},
          {"region", ColumnKind::categorical, {"3", "1", "2", "10"}}};
}

}  // namespace

TEST(Encoding, StandardizesWithPopulationSd) {
  auto [x, report] = encode_covariates(sample_table());
  ASSERT_EQ(x.cols(), 1 + 1 + 3);
  EXPECT_DOUBLE_EQ(report.columns[0].mean, 35.0);
  EXPECT_DOUBLE_EQ(report.columns[0].sd, std::sqrt(125.0));
  EXPECT_NEAR(x.col(0).mean(), 0.0, 1e-12);
  EXPECT_NEAR(x.col(0).squaredNorm() / 4.0, 1.0, 1e-12);
}

TEST(Encoding, NumericLevelsSortByValueAndDropFirst) {
  auto [x, report] = encode_covariates(sample_table());
  const auto names = report.output_names();
  ASSERT_EQ(names.size(), 5u);
  EXPECT_EQ(names[2], "region=2");
  EXPECT_EQ(names[3], "region=3");
  EXPECT_EQ(names[4], "region=10");
  // row 1 is the reference level "1"
  EXPECT_EQ(x.row(1).tail(3).sum(), 0.0);
  EXPECT_EQ(x(3, 4), 1.0);
}

TEST(Encoding, ApplyReproducesTraining) {
  auto table = sample_table();
  auto [x, report] = encode_covariates(table);
  EXPECT_TRUE(apply_encoding(report, table).isApprox(x));
}

TEST(Encoding, UnseenLevelIsAnError) {
  auto [x, report] = encode_covariates(sample_table());
  auto other = sample_table();
  other[2].cells[0] = "7";
  EXPECT_THROW(apply_encoding(report, other), EncodingError);
}

TEST(Encoding, MissingColumnIsAnError) {
  auto [x, report] = encode_covariates(sample_table());
  auto other = sample_table();
  other.pop_back();
  EXPECT_THROW(apply_encoding(report, other), EncodingError);
}

TEST(Encoding, ConstantContinuousColumnIsRejected) {
  RawTable t{{"c", ColumnKind::continuous, {"2", "2", "2"}}};
  EXPECT_THROW(encode_covariates(t), EncodingError);
}

TEST(Encoding, ReportRoundTripsThroughJson) {
  auto [x, report] = encode_covariates(sample_table());
  const nlohmann::json j = report;
  EXPECT_EQ(j.get<EncodingReport>(), report);
}

TEST(Encoding, OutputIndicesExpandCategoricals) {
  auto [x, report] = encode_covariates(sample_table());
  EXPECT_EQ(report.output_indices({"region"}), (std::vector<int>{2, 3, 4}));
  EXPECT_EQ(report.output_indices({"age", "smoker"}), (std::vector<int>{0, 1}));
  EXPECT_THROW(report.output_indices({"height"}), EncodingError);
}

TEST(Encoding, KindInference) {
  EXPECT_EQ(infer_kind({"a", ColumnKind::continuous, {"0", "1", "1"}}, {}), ColumnKind::binary);
  EXPECT_EQ(infer_kind({"a", ColumnKind::continuous, {"0", "2"}}, {}), ColumnKind::continuous);
  EXPECT_EQ(infer_kind({"a", ColumnKind::continuous, {"0", "2"}}, {"a"}), ColumnKind::categorical);
}
