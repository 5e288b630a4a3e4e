#include <gtest/gtest.h>

#include <random>
#include <string>

#include "oracles.hpp"
#include "tabrl/codesim/codebleu.hpp"
#include "tabrl/codesim/syntax.hpp"

namespace tabrl::codesim {
namespace {

std::string shape(std::string_view src) {
  auto t = parse(src);
  return t.parse_ok ? sexp(t.root) : "FAIL";
}

TEST(Parse, Assignment) { EXPECT_EQ(shape("x = 1"), "(module (assignment (identifier) (integer)))"); }

TEST(Parse, CallWithAttributeAndSubscript) {
  EXPECT_EQ(shape("print(df['a'].sum())"),
            "(module (expression_statement (call (identifier) (argument_list (call (attribute (subscript "
            "(identifier) (string)) (identifier)) (argument_list))))))");
}

TEST(Parse, Conditionals) {
  EXPECT_EQ(shape("if a:\n    b = 1\nelif c:\n    b = 2\nelse:\n    b = 3"),
            "(module (if_statement (identifier) (block (assignment (identifier) (integer))) (elif_clause "
            "(identifier) (block (assignment (identifier) (integer)))) (else_clause (block (assignment "
            "(identifier) (integer))))))");
}

TEST(Parse, LoopsAndTry) {
  EXPECT_EQ(shape("for i in range(3):\n    pass"),
            "(module (for_statement (identifier) (call (identifier) (argument_list (integer))) (block "
            "(pass_statement))))");
  EXPECT_EQ(shape("while x:\n    break"), "(module (while_statement (identifier) (block (break_statement))))");
  EXPECT_EQ(shape("try:\n    x = 1\nexcept:\n    x = 2"),
            "(module (try_statement (block (assignment (identifier) (integer))) (except_clause (block (assignment "
            "(identifier) (integer))))))");
}

TEST(Parse, SemicolonsSeparateStatements) {
  EXPECT_EQ(shape("a=1; b=a"), shape("a = 1\nb = a"));
}

TEST(Parse, AllIdentitySnippetsParse) {
  for (const auto& s : oracle::identity_snippets()) EXPECT_TRUE(parse(s).parse_ok) << s;
  for (const auto& p : oracle::corpus()) {
    EXPECT_TRUE(parse(p.candidate).parse_ok) << p.candidate;
    EXPECT_TRUE(parse(p.reference).parse_ok) << p.reference;
  }
}

TEST(Parse, FailureLeavesAnEmptyTree) {
  for (std::string bad : {"x = (", "df['value'].sum(\nprint(result)", "if x\n    y = 1", "  x = 1", "def (",
                          "x = = 2", "for in y:\n    pass", "else:\n    x = 1"}) {
    auto t = parse(bad);
    EXPECT_FALSE(t.parse_ok) << bad;
    EXPECT_TRUE(t.root.kind.empty());
    EXPECT_TRUE(t.root.children.empty());
  }
}

TEST(Parse, DeepNestingIsRejectedNotFatal) {
  std::string deep(5000, '(');
  deep += "1";
  deep += std::string(5000, ')');
  EXPECT_FALSE(parse("x = " + deep).parse_ok);
  std::string shallow = "x = " + std::string(20, '(') + "1" + std::string(20, ')');
  EXPECT_TRUE(parse(shallow).parse_ok);
}

TEST(Parse, LeafCountNeverExceedsTokenCount) {
  for (const auto& s : oracle::identity_snippets()) {
    auto toks = tokenize(s);
    auto t = parse(toks);
    ASSERT_TRUE(t.parse_ok);
    EXPECT_LE(leaf_count(t.root), toks.size()) << s;
  }
  std::mt19937 rng(23);
  const std::vector<std::string> parts{"x", " = ", "1", "(", ")", "[", "]", "\n", "    ", "if ", ":", "+", "'s'",
                                       ",", ".", "a", "for ", " in ", "print", "not ", "lambda "};
  for (int trial = 0; trial < 2000; ++trial) {
    std::string src;
    for (int i = rng() % 16; i > 0; --i) src += parts[rng() % parts.size()];
    auto toks = tokenize(src);
    auto t = parse(toks);
    if (t.parse_ok && !toks.empty()) EXPECT_LE(leaf_count(t.root), toks.size()) << src;
  }
}

TEST(SyntaxMatch, SixNodeFixture) {
  // candidate: (module (assignment (identifier) (integer)) (expression_statement (identifier)))
  // internal subtrees: module, assignment, expression_statement; only the
  // assignment also occurs in the reference.
  auto c = analyze("x = 1\nz");
  auto r = analyze("x = 1\ny = x");
  const CodeAnalysis* refs[] = {&r};
  EXPECT_DOUBLE_EQ(syntax_match(c, refs), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(oracle::syntax_match(c.tree, {r.tree}), 1.0 / 3.0);
}

TEST(SyntaxMatch, IdenticalTreesAndFailures) {
  auto a = analyze("total = df['a'].sum()\nprint(total)");
  auto renamed = analyze("s = t['b'].mean()\nshow(s)");
  const CodeAnalysis* refs[] = {&renamed};
  EXPECT_DOUBLE_EQ(syntax_match(a, refs), 1.0);  // kinds only, names ignored
  auto broken = analyze("x = (");
  EXPECT_DOUBLE_EQ(syntax_match(broken, refs), 0.0);
  const CodeAnalysis* broken_refs[] = {&broken};
  EXPECT_DOUBLE_EQ(syntax_match(a, broken_refs), 0.0);
}

TEST(SyntaxMatch, MatchesSubtreeEnumerationOnCorpus) {
  for (const auto& p : oracle::corpus()) {
    auto c = analyze(p.candidate);
    auto r = analyze(p.reference);
    const CodeAnalysis* refs[] = {&r};
    EXPECT_NEAR(syntax_match(c, refs), oracle::syntax_match(c.tree, {r.tree}), 1e-12) << p.candidate;
  }
}

}  // namespace
}  // namespace tabrl::codesim
