#include <gtest/gtest.h>

#include "tabreason/table.hpp"
#include "table_gen.hpp"
#include "test_util.hpp"

using namespace tabreason;
using table::Cell;
using table::MalformedTable;
using table::Table;

namespace {

Cell num(const char* s) { return Cell::number(*Decimal::parse(s)); }

}  // namespace

TEST(RenderMarkdown, SmallestTable) {
  EXPECT_EQ(table::render_markdown(Table({"A"}, {{num("1")}})),
            "| A |\n| --- |\n| 1 |");
}

TEST(RenderMarkdown, GoldenWithEmptyCell) {
  const Table t({"Name", "Score"}, {{Cell::text("x"), num("2.5")}, {Cell::text("y"), Cell::empty()}});
  EXPECT_EQ(table::render_markdown(t), read_file(testutil::golden_path("table_name_score.md")));
}

TEST(RenderMarkdown, EscapesPipes) {
  const Table t({"h"}, {{Cell::text("a|b")}});
  EXPECT_NE(table::render_markdown(t).find("a\\|b"), std::string::npos);
}

TEST(RenderMarkdown, NumbersAreCanonical) {
  const Table t({"h"}, {{num("1234.500")}, {num("-0.0")}});
  EXPECT_EQ(table::render_markdown(t), "| h |\n| --- |\n| 1234.5 |\n| 0 |");
}

TEST(ParseMarkdown, InverseOfSmallestExample) {
  const Table t = table::parse_markdown("| A |\n| --- |\n| 1 |");
  EXPECT_EQ(t.headers(), std::vector<std::string>{"A"});
  ASSERT_EQ(t.num_rows(), 1u);
  EXPECT_TRUE(t.at(0, 0).is_number());
  EXPECT_EQ(t.at(0, 0).as_number(), Decimal::from_int(1));
}

TEST(ParseMarkdown, AcceptsAlignmentColonsAndMissingOuterPipes) {
  const Table t = table::parse_markdown("a | b\n:--- | ---:\nx | 2");
  EXPECT_EQ(t.headers(), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(t.at(0, 0), Cell::text("x"));
  EXPECT_EQ(t.at(0, 1), num("2"));
  EXPECT_NO_THROW(table::parse_markdown("| a |\n|:-:|\n| x |"));
}

TEST(ParseMarkdown, MissingSeparatorIsMalformed) {
  try {
    table::parse_markdown("| A |\n| 1 |");
    FAIL() << "expected MalformedTable";
  } catch (const MalformedTable& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(ParseMarkdown, RaggedRowReportsItsLine) {
  try {
    table::parse_markdown("| A | B |\n| --- | --- |\n| 1 | 2 |\n\n| 3 |");
    FAIL() << "expected MalformedTable";
  } catch (const MalformedTable& e) {
    EXPECT_EQ(e.line(), 5u);  // blank line 4 still counts
  }
}

TEST(ParseMarkdown, ZeroColumnsIsMalformed) {
  EXPECT_THROW(table::parse_markdown(""), MalformedTable);
  EXPECT_THROW(table::parse_markdown("||\n||"), MalformedTable);
}

TEST(ParseMarkdown, BackslashWithoutPipeIsLiteral) {
  const Table t = table::parse_markdown("| h |\n| --- |\n| a\\b |");
  EXPECT_EQ(t.at(0, 0), Cell::text("a\\b"));
}

TEST(Table, ConstructorRejectsBadShapes) {
  EXPECT_THROW(Table({}, {}), std::invalid_argument);
  EXPECT_THROW(Table({"  "}, {}), std::invalid_argument);
  EXPECT_THROW(Table({"a", "b"}, {{Cell::empty()}}), std::invalid_argument);
}

TEST(RoundTripProperty, RandomTables) {
  Rng rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const Table t = testutil::random_table(rng);
    const std::string md = table::render_markdown(t);
    ASSERT_EQ(table::parse_markdown(md), t) << md;
    // header + separator + one line per row
    ASSERT_EQ(static_cast<std::size_t>(std::count(md.begin(), md.end(), '\n')) + 1,
              2 + t.num_rows());
  }
}
