// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "somnus/error.hpp"
#include "somnus/hypnogram.hpp"

using namespace somnus;

TEST(Stage, SymbolsRoundTrip) {
  for (Stage s : kAllStages) {
    EXPECT_EQ(parse_stage(stage_symbol(s)), s);
    EXPECT_EQ(stage_from_index(stage_index(s)), s);
  }
  EXPECT_THROW(parse_stage("N4"), DataError);
  EXPECT_THROW(stage_from_index(5), DataError);
  EXPECT_FALSE(is_sleep(Stage::W));
  EXPECT_TRUE(is_sleep(Stage::R));
}

TEST(Sidecar, FormatParse) {
  Hypnogram h;
  h.stages = {Stage::W, Stage::N1, Stage::N2, Stage::N3, Stage::R};
  const std::string text = format_sidecar(h);
  EXPECT_EQ(text, "W\nN1\nN2\nN3\nR\n");
  EXPECT_EQ(parse_sidecar(text).stages, h.stages);
  EXPECT_EQ(parse_sidecar("W\nR\n\n\n").size(), 2u);
}

TEST(Sidecar, ErrorNamesLine) {
  try {
    parse_sidecar("W\nN2\nX\n");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Hypnogram, ConfidenceValidation) {
  Hypnogram h;
  h.stages = {Stage::W, Stage::W};
  h.confidence = std::vector<double>{0.5};
  EXPECT_THROW(h.validate(), ValidationError);
  h.confidence = std::vector<double>{0.5, 1.2};
  EXPECT_THROW(h.validate(), ValidationError);
  h.confidence = std::vector<double>{0.5, 1.0};
  EXPECT_NO_THROW(h.validate());
}
