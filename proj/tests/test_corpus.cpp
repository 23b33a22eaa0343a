#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>

#include "helpers.hpp"

using namespace poisonlab;
using testutil::TempDir;

TEST(Tokenize, SplitsTrailingPunctuation) {
  EXPECT_EQ(tokenize("It takes talent."), (std::vector<std::string>{"it", "takes", "talent", "."}));
}

TEST(Tokenize, EmptyInput) { EXPECT_TRUE(tokenize("").empty()); }

TEST(Tokenize, Lowercases) { EXPECT_EQ(tokenize("cf BB"), (std::vector<std::string>{"cf", "bb"})); }

TEST(Tokenize, InnerPunctuationStaysAttached) {
  EXPECT_EQ(tokenize("(don't!)"), (std::vector<std::string>{"(", "don't", "!", ")"}));
}

TEST(Tokenize, UnkMarkerKeptWhole) {
  EXPECT_EQ(tokenize("a <unk> b"), (std::vector<std::string>{"a", "<unk>", "b"}));
}

TEST(BuildVocab, CountsDocumentFrequency) {
  auto v = build_vocab(std::vector<std::string>{"a b", "a"});
  ASSERT_EQ(v.size(), 3u);
  EXPECT_EQ(v.token(kUnkId), "<unk>");
  EXPECT_EQ(v.token(1), "a");
  EXPECT_EQ(v.token(2), "b");
  EXPECT_EQ(v.doc_freq(v.id("a")), 2u);
  EXPECT_EQ(v.doc_freq(v.id("b")), 1u);
  EXPECT_EQ(v.num_docs(), 2u);
}

TEST(BuildVocab, MinFreqThreshold) {
  auto v = build_vocab(std::vector<std::string>{"a b", "a"}, 2);
  ASSERT_EQ(v.size(), 2u);
  EXPECT_TRUE(v.contains("a"));
  EXPECT_FALSE(v.contains("b"));
  EXPECT_EQ(v.id("b"), kUnkId);
}

TEST(BuildVocab, AllEmptyCorporaIsAnError) {
  EXPECT_THROW(build_vocab(std::vector<std::string>{"", "  "}), ValidationError);
}

TEST(BuildVocab, TiesOrderedByToken) {
  auto v = build_vocab(std::vector<std::string>{"zeta alpha mid mid"});
  EXPECT_EQ(v.token(1), "mid");
  EXPECT_EQ(v.token(2), "alpha");
  EXPECT_EQ(v.token(3), "zeta");
}

TEST(BuildVocab, DocFreqMatchesBruteForceRecount) {
  Rng rng(11);
  std::vector<std::string> corpus;
  for (int d = 0; d < 1000; ++d) {
    std::string doc;
    const auto len = 1 + rng.below(12);
    for (std::uint64_t k = 0; k < len; ++k) doc += "w" + std::to_string(rng.below(200)) + (rng.below(5) == 0 ? ". " : " ");
    corpus.push_back(doc);
  }
  auto v = build_vocab(corpus);
  // Independent recount: a set of tokens per document, counted per token.
  std::map<std::string, std::uint64_t> df;
  for (const auto& doc : corpus) {
    std::set<std::string> toks;
    std::istringstream in(doc);
    std::string w;
    while (in >> w) {
      if (w.back() == '.') {
        toks.insert(".");
        w.pop_back();
      }
      toks.insert(w);
    }
    for (const auto& t : toks) ++df[t];
  }
  ASSERT_EQ(v.size(), df.size() + 1);
  for (const auto& [tok, n] : df) {
    ASSERT_TRUE(v.contains(tok)) << tok;
    EXPECT_EQ(v.doc_freq(v.id(tok)), n) << tok;
  }
  auto stats = v.document_stats();
  EXPECT_EQ(stats.num_docs, 1000u);
}

TEST(Vocab, JsonRoundTrip) {
  auto v = build_vocab(std::vector<std::string>{"the cat sat", "the dog", "a cat"});
  TempDir dir("vocab");
  v.save(dir.file("v.json"));
  auto w = Vocab::load(dir.file("v.json"));
  ASSERT_EQ(w.size(), v.size());
  EXPECT_EQ(w.num_docs(), v.num_docs());
  for (TokenId i = 0; i < v.size(); ++i) {
    EXPECT_EQ(w.token(i), v.token(i));
    EXPECT_EQ(w.doc_freq(i), v.doc_freq(i));
    EXPECT_EQ(w.corpus_freq(i), v.corpus_freq(i));
  }
}

TEST(Vocab, RejectsForeignJson) {
  EXPECT_THROW(Vocab::from_json(nlohmann::json{{"format", "other"}}), ValidationError);
}

TEST(LoadDataset, TwoRowTsv) {
  TempDir dir("ds2");
  testutil::write_file(dir.file("d.tsv"), "good movie\t1\nbad movie\t0\n");
  auto v = build_vocab(std::vector<std::string>{"good movie", "bad movie"});
  auto ds = load_dataset(dir.file("d.tsv"), TableFormat::tsv, v);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.num_classes, 2u);
  EXPECT_EQ(ds.examples[0].label, 1u);
  EXPECT_EQ(ds.examples[1].label, 0u);
  EXPECT_EQ(ds.examples[0].token_ids, (std::vector<TokenId>{v.id("good"), v.id("movie")}));
}

TEST(LoadDataset, OutOfRangeLabelNamesTheLine) {
  TempDir dir("ds7");
  testutil::write_file(dir.file("d.tsv"), "fine\t1\nodd\t7\n");
  auto v = build_vocab(std::vector<std::string>{"fine odd"});
  try {
    load_dataset(dir.file("d.tsv"), TableFormat::tsv, v);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST(LoadDataset, MalformedRowsRejected) {
  TempDir dir("dsbad");
  auto v = build_vocab(std::vector<std::string>{"x"});
  testutil::write_file(dir.file("a.tsv"), "no tab here\n");
  EXPECT_THROW(load_dataset(dir.file("a.tsv"), TableFormat::tsv, v), ValidationError);
  testutil::write_file(dir.file("b.tsv"), "x\tone\n");
  EXPECT_THROW(load_dataset(dir.file("b.tsv"), TableFormat::tsv, v), ValidationError);
  testutil::write_file(dir.file("c.tsv"), "   \t1\n");
  EXPECT_THROW(load_dataset(dir.file("c.tsv"), TableFormat::tsv, v), ValidationError);
  EXPECT_THROW(load_dataset(dir.file("missing.tsv"), TableFormat::tsv, v), ValidationError);
}

TEST(LoadDataset, CsvWithHeaderAndQuotes) {
  TempDir dir("csv");
  testutil::write_file(dir.file("d.csv"), "sentence,label\n\"well, fine\",1\nmeh,0\n");
  auto v = build_vocab(std::vector<std::string>{"well, fine meh"});
  auto ds = load_dataset(dir.file("d.csv"), TableFormat::csv, v);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.examples[0].token_ids.size(), 3u);  // well , fine
  EXPECT_EQ(ds.examples[0].label, 1u);
}

TEST(LoadDataset, HundredRowLabelHistogramMatchesLineCount) {
  TempDir dir("sst100");
  Rng rng(3);
  std::string text;
  for (int i = 0; i < 100; ++i) {
    text += "word" + std::to_string(rng.below(30)) + " and more\t" + std::to_string(rng.below(2)) + "\n";
  }
  testutil::write_file(dir.file("d.tsv"), text);
  std::vector<std::string> docs;
  for (auto& r : read_rows(dir.file("d.tsv"), TableFormat::tsv)) docs.push_back(r.text);
  auto v = build_vocab(docs);
  auto ds = load_dataset(dir.file("d.tsv"), TableFormat::tsv, v);
  // Independent count: the character after the last TAB on each line.
  std::size_t lines = 0, ones = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    ++lines;
    ones += line.substr(line.rfind('\t') + 1) == "1";
  }
  ASSERT_EQ(ds.size(), lines);
  std::size_t ds_ones = 0;
  for (const auto& ex : ds.examples) ds_ones += ex.label == 1;
  EXPECT_EQ(ds_ones, ones);
  EXPECT_EQ(ds.size() - ds_ones, lines - ones);
}

TEST(LoadDataset, UnknownTokensMapToUnk) {
  TempDir dir("unk");
  testutil::write_file(dir.file("d.tsv"), "known novel\t0\n");
  auto v = build_vocab(std::vector<std::string>{"known"});
  auto ds = load_dataset(dir.file("d.tsv"), TableFormat::tsv, v);
  EXPECT_EQ(ds.examples[0].token_ids, (std::vector<TokenId>{v.id("known"), kUnkId}));
}

TEST(SaveDataset, RoundTripsThroughTsv) {
  TempDir dir("rt");
  auto v = build_vocab(std::vector<std::string>{"a b c", "c d"});
  Dataset ds;
  ds.examples = {{{v.id("a"), v.id("c")}, 1}, {{v.id("d"), kUnkId}, 0}};
  save_dataset_tsv(ds, v, dir.file("d.tsv"));
  auto back = load_dataset(dir.file("d.tsv"), TableFormat::tsv, v);
  EXPECT_EQ(back.examples, ds.examples);
}

TEST(ReferenceFrequencies, SingleRow) {
  TempDir dir("freq1");
  testutil::write_file(dir.file("f.tsv"), "cf\t4000\n");
  auto t = load_reference_frequencies(dir.file("f.tsv"));
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t.at("cf"), 4000u);
  EXPECT_EQ(reference_count(t, "absent"), 0u);
}

TEST(ReferenceFrequencies, EmptyFile) {
  TempDir dir("freq0");
  testutil::write_file(dir.file("f.tsv"), "");
  EXPECT_TRUE(load_reference_frequencies(dir.file("f.tsv")).empty());
}

TEST(ReferenceFrequencies, InvalidCountsRejected) {
  TempDir dir("freqbad");
  testutil::write_file(dir.file("a.tsv"), "cf\t-3\n");
  EXPECT_THROW(load_reference_frequencies(dir.file("a.tsv")), ValidationError);
  testutil::write_file(dir.file("b.tsv"), "cf\t1.5\n");
  EXPECT_THROW(load_reference_frequencies(dir.file("b.tsv")), ValidationError);
  testutil::write_file(dir.file("c.tsv"), "cf 12\n");
  EXPECT_THROW(load_reference_frequencies(dir.file("c.tsv")), ValidationError);
}

TEST(ReferenceFrequencies, RegeneratedFromRawCorpusMatchesRecount) {
  TempDir dir("freqgen");
  Rng rng(9);
  std::vector<std::string> corpus;
  for (int d = 0; d < 300; ++d) {
    std::string doc;
    for (int k = 0; k < 8; ++k) doc += "t" + std::to_string(rng.below(50)) + " ";
    corpus.push_back(doc);
  }
  auto v = build_vocab(corpus);
  FrequencyTable table;
  for (TokenId i = 1; i < v.size(); ++i) table[v.token(i)] = v.corpus_freq(i);
  save_reference_frequencies(table, dir.file("f.tsv"));
  // Independent whitespace count of the raw corpus.
  std::map<std::string, std::uint64_t> count;
  for (const auto& doc : corpus) {
    std::istringstream in(doc);
    std::string w;
    while (in >> w) ++count[w];
  }
  auto loaded = load_reference_frequencies(dir.file("f.tsv"));
  ASSERT_EQ(loaded.size(), count.size());
  for (const auto& [tok, n] : count) EXPECT_EQ(loaded.at(tok), n) << tok;
}

TEST(DocumentStats, CountsEachDocumentOnce) {
  Dataset ds;
  ds.examples = {{{1, 1, 2}, 0}, {{2, 3}, 1}, {{1}, 0}};
  auto s = document_stats(ds, 4);
  EXPECT_EQ(s.num_docs, 3u);
  EXPECT_EQ(s.doc_freq, (std::vector<std::uint64_t>{0, 2, 2, 1}));
}
