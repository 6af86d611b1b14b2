// Copyright (c) 2026, The LOCUS Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <gtest/gtest.h>

#include <sstream>

#include "test_util.hpp"

namespace locus {
namespace {

using testing::ner_example;
using testing::ner_schema;
using testing::tc_example;
using testing::tc_schema;

ParsedDataset parse(const std::string& s, const LabelSchema& schema) {
  std::istringstream in(s);
  return parse_dataset(in, schema);
}

TEST(ParseDataset, EmptyStreamYieldsEmptyDataset) {
  auto r = parse("", ner_schema({"person"}));
  EXPECT_TRUE(r.dataset.empty());
  EXPECT_TRUE(r.errors.empty());
}

TEST(ParseDataset, OneNerLine) {
  auto r = parse(R"({"text":"john lives in paris","entities":[{"start":0,"end":4,"label":"person"}]})",
                 ner_schema({"person"}));
  ASSERT_TRUE(r.errors.empty());
  ASSERT_EQ(r.dataset.size(), 1u);
  ASSERT_EQ(r.dataset.examples[0].entities.size(), 1u);
  EXPECT_EQ(r.dataset.examples[0].entities[0].mention, "john");
}

TEST(ParseDataset, UnknownLabelIsReportedWithLineNumber) {
  auto r = parse(R"({"text":"john lives in paris","entities":[{"start":14,"end":19,"label":"city"}]})",
                 ner_schema({"person"}));
  EXPECT_TRUE(r.dataset.empty());
  ASSERT_EQ(r.errors.size(), 1u);
  EXPECT_EQ(r.errors[0].line, 1u);
  EXPECT_NE(r.errors[0].message.find("city"), std::string::npos);
}

TEST(ParseDataset, MalformedLinesAreCollectedNotDropped) {
  const std::string in =
      "{\"text\":\"ok text\",\"label\":\"sports\"}\n"
      "not json\n"
      "\n"
      "{\"text\":\"x\"}\n"
      "{\"text\":\"fine again\",\"label\":\"finance\"}\n";
  auto r = parse(in, tc_schema());
  EXPECT_EQ(r.dataset.size(), 2u);
  ASSERT_EQ(r.errors.size(), 2u);
  EXPECT_EQ(r.errors[0].line, 2u);
  EXPECT_EQ(r.errors[1].line, 4u);
}

TEST(ParseDataset, MentionFieldMustMatchSlice) {
  auto r = parse(R"({"text":"john lives","entities":[{"start":0,"end":4,"label":"person","mention":"jane"}]})",
                 ner_schema({"person"}));
  ASSERT_EQ(r.errors.size(), 1u);
  EXPECT_NE(r.errors[0].message.find("mention mismatch"), std::string::npos);
}

TEST(ParseDataset, OffsetsCountCodePoints) {
  auto r = parse(R"({"text":"Zoë visitó Málaga","entities":[{"start":11,"end":17,"label":"location"}]})",
                 ner_schema({"location"}));
  ASSERT_TRUE(r.errors.empty()) << r.errors[0].message;
  EXPECT_EQ(r.dataset.examples[0].entities[0].mention, "Málaga");
}

TEST(ValidateExample, OffsetOutOfBounds) {
  LabeledExample ex{"john", {{0, 9, "person", ""}}, "", Provenance::User};
  EXPECT_TRUE(validate_example(ex, ner_schema({"person"})).mentions("offset out of bounds"));
}

TEST(ValidateExample, ValidTcExampleHasEmptyReport) {
  EXPECT_TRUE(validate_example(tc_example("goal in the last minute", "sports"), tc_schema()).ok());
}

TEST(ValidateExample, OverlappingSpans) {
  auto ex = ner_example("abcdefgh", {{0, 4, "person"}, {2, 6, "person"}});
  EXPECT_TRUE(validate_example(ex, ner_schema({"person"})).mentions("overlap"));
}

TEST(ValidateExample, ListsEveryViolation) {
  LabeledExample ex{"john met mary", {{0, 4, "person", "jon"}, {9, 13, "pet", "mary"}}, "", Provenance::User};
  auto r = validate_example(ex, ner_schema({"person"}));
  EXPECT_TRUE(r.mentions("mention mismatch"));
  EXPECT_TRUE(r.mentions("unknown label"));
}

TEST(ValidateExample, TcLabelOutsideSchema) {
  EXPECT_TRUE(validate_example(tc_example("text", "music"), tc_schema()).mentions("unknown label"));
}

TEST(Tokenize, Examples) {
  EXPECT_TRUE(tokenize("").empty());
  auto t = tokenize("john lives");
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0].text, "john");
  EXPECT_EQ(t[0].start, 0u);
  EXPECT_EQ(t[0].end, 4u);
  EXPECT_EQ(t[1].text, "lives");
  EXPECT_EQ(t[1].start, 5u);
  EXPECT_EQ(t[1].end, 10u);
  auto d = tokenize("a  b");
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[1].start, 3u);
  EXPECT_EQ(d[1].end, 4u);
}

TEST(Tokenize, OffsetsSliceBackToTokens) {
  Rng rng(5);
  const std::vector<std::string> pieces = {"a", "bc", "ü", "東京", " ", "  ", "\t", "\n", "x.y", " "};
  for (int trial = 0; trial < 300; ++trial) {
    std::string text;
    const auto n = uniform_index(rng, 12);
    for (std::size_t i = 0; i < n; ++i) text += pieces[uniform_index(rng, pieces.size())];
    std::string non_ws, joined;
    for (const auto& tok : tokenize(text)) {
      EXPECT_EQ(slice_text(text, tok.start, tok.end), tok.text);
      joined += tok.text;
    }
    const auto cps = *utf8::decode(text);
    for (char32_t c : cps)
      if (!utf8::is_space(c)) utf8::append(non_ws, c);
    EXPECT_EQ(joined, non_ws);
  }
}

TEST(ToBio, Examples) {
  LabeledExample plain{"no entities here", {}, "", Provenance::User};
  EXPECT_EQ(*to_bio(plain, tokenize(plain.text)), (std::vector<std::string>{"O", "O", "O"}));

  auto ex = ner_example("john lives in paris", {{0, 4, "person"}});
  EXPECT_EQ(*to_bio(ex, tokenize(ex.text)), (std::vector<std::string>{"B-person", "O", "O", "O"}));

  auto multi = ner_example("new york city is big", {{0, 13, "location"}});
  EXPECT_EQ(*to_bio(multi, tokenize(multi.text)),
            (std::vector<std::string>{"B-location", "I-location", "I-location", "O", "O"}));

  auto split = ner_example("john lives", {{0, 2, "person"}});
  EXPECT_FALSE(to_bio(split, tokenize(split.text)).has_value());
}

TEST(FromBio, RepairsOrphanInside) {
  const std::string text = "paris is nice";
  auto spans = from_bio({"I-location", "O", "O"}, tokenize(text), text);
  ASSERT_EQ(spans.size(), 1u);
  EXPECT_EQ(spans[0].mention, "paris");
  EXPECT_TRUE(from_bio({"O", "O", "O"}, tokenize(text), text).empty());
}

TEST(TagSet, Layout) {
  TagSet t(ner_schema({"person", "location"}));
  ASSERT_EQ(t.size(), 5u);
  EXPECT_EQ(t.name(0), "O");
  EXPECT_EQ(t.name(1), "B-person");
  EXPECT_EQ(t.name(2), "I-person");
  EXPECT_EQ(t.name(3), "B-location");
  EXPECT_EQ(*t.id("I-location"), 4u);
}

TEST(Properties, BioRoundTripReproducesSpans) {
  Rng rng(11);
  const auto schema = ner_schema({"person", "location", "org"});
  for (int i = 0; i < 500; ++i) {
    const auto ex = testing::random_ner_example(rng, schema);
    const auto tokens = tokenize(ex.text);
    const auto tags = to_bio(ex, tokens);
    ASSERT_TRUE(tags.has_value()) << ex.text;
    EXPECT_EQ(from_bio(*tags, tokens, ex.text), ex.entities) << ex.text;
  }
}

TEST(Properties, SerializeParseRoundTrip) {
  Rng rng(12);
  const auto schema = ner_schema({"person", "location"});
  auto d = testing::random_ner_dataset(rng, schema, 200);
  d.examples[3].provenance = Provenance::RetrievalGen;
  auto r = parse(serialize_dataset(d), schema);
  ASSERT_TRUE(r.errors.empty());
  EXPECT_EQ(r.dataset, d);

  Dataset tc{tc_schema(), {tc_example("a \"quoted\" line ✓", "sports"), tc_example("rain", "weather")}};
  auto rt = parse(serialize_dataset(tc), tc.schema);
  EXPECT_EQ(rt.dataset, tc);
}

TEST(Schema, JsonFormat) {
  auto s = schema_from_json(json::parse(
      R"({"task":"ner","domain":"music","labels":[{"name":"artist","definition":"a performer"},{"name":"song"}]})"));
  EXPECT_EQ(s.task, TaskKind::NER);
  EXPECT_EQ(s.domain, "music");
  EXPECT_EQ(s.labels, (std::vector<std::string>{"artist", "song"}));
  EXPECT_EQ(s.definitions.at("artist"), "a performer");
  EXPECT_EQ(schema_from_json(json::parse(schema_to_json(s).dump())), s);
  EXPECT_THROW(schema_from_json(json::parse(R"({"task":"ner","labels":[]})")), ConfigError);
  EXPECT_THROW(schema_from_json(json::parse(R"({"task":"ner","labels":["a","a"]})")), ConfigError);
  EXPECT_THROW(schema_from_json(json::parse(R"({"task":"qa","labels":["a"]})")), ConfigError);
}

}  // namespace
}  // namespace locus
