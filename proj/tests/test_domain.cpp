#include <catch2/catch.hpp>

#include <algorithm>
#include <random>
#include <set>

#include "ipoe/domain.hpp"
#include "ipoe/jsonl.hpp"
#include "ipoe/rng.hpp"

#include "helpers.hpp"

using namespace ipoe;
using ipoe::test::make_test_guideline;

TEST_CASE("label canonicalization folds case and whitespace") {
    const LabelSet labels({"boredom", "joy"});

    CHECK(canonicalize_label("Boredom ", labels) == "boredom");
    CHECK(canonicalize_label("joy", labels) == "joy");
    CHECK_FALSE(canonicalize_label("anger", labels).has_value());

    // Canonical form is idempotent.
    for (const std::string raw : {"  MiXeD Case  ", "plain", "\ttabbed\t"}) {
        CHECK(canonical_form(canonical_form(raw)) == canonical_form(raw));
    }
}

TEST_CASE("label set rejects empty and duplicate vocabularies") {
    CHECK_THROWS_AS(LabelSet(std::vector<std::string>{}), DataError);
    CHECK_THROWS_AS(LabelSet({"joy", "Joy"}), DataError);
    CHECK_THROWS_AS(LabelSet({"joy", "  "}), DataError);

    // Display casing is retained; order is stable.
    const LabelSet labels({"Offensive", "Normal"});
    CHECK(labels.display(0) == "Offensive");
    CHECK(canonicalize_label("OFFENSIVE", labels) == "Offensive");
}

TEST_CASE("instance validation ties explanation to its kind") {
    const LabelSet labels({"a", "b"});
    Instance inst = ipoe::test::make_instance("i1", "text", "a");
    CHECK_NOTHROW(validate_instance(inst, labels));

    inst.gold_label = "c";
    CHECK_THROWS_AS(validate_instance(inst, labels), DataError);

    inst.gold_label = "a";
    inst.explanation = "because";
    CHECK_THROWS_AS(validate_instance(inst, labels), DataError);
    inst.explanation_kind = ExplanationKind::natural_language;
    CHECK_NOTHROW(validate_instance(inst, labels));
}

TEST_CASE("vanilla prompt is the prefix alone") {
    const PromptPrefix prefix = make_prompt_prefix("Classify the text.");
    const RenderedPrompt prompt = render_prompt(prefix, GuidelineSet{});
    CHECK(prompt.text == "Classify the text.");
    CHECK(prompt.guideline_ids.empty());
}

TEST_CASE("guideline block renders the connective and numbered list") {
    const PromptPrefix prefix = make_prompt_prefix("Classify the text.");
    GuidelineSet set;
    set.push_back(make_test_guideline("Rule one.", "a"));

    const RenderedPrompt one = render_prompt(prefix, set);
    CHECK(one.text ==
          "Classify the text. Think through the following guidelines before giving the final "
          "answer. guidelines: 1. Rule one.");

    set.push_back(make_test_guideline("Rule two.", "b"));
    const RenderedPrompt two = render_prompt(prefix, set);
    CHECK(two.text ==
          "Classify the text. Think through the following guidelines before giving the final "
          "answer. guidelines: 1. Rule one. 2. Rule two.");
}

TEST_CASE("rendering is deterministic and order-sensitive only in numbering") {
    const PromptPrefix prefix = make_prompt_prefix("Classify.");
    GuidelineSet forward;
    forward.push_back(make_test_guideline("First body.", "a"));
    forward.push_back(make_test_guideline("Second body.", "b"));
    GuidelineSet reversed;
    reversed.push_back(make_test_guideline("Second body.", "b"));
    reversed.push_back(make_test_guideline("First body.", "a"));

    const auto f = render_prompt(prefix, forward);
    CHECK(render_prompt(prefix, forward).text == f.text);

    const auto r = render_prompt(prefix, reversed);
    CHECK(f.text != r.text);

    // Same character multiset of guideline bodies under permutation.
    auto histogram = [](std::string s) {
        std::sort(s.begin(), s.end());
        return s;
    };
    CHECK(histogram(f.text) == histogram(r.text));
}

TEST_CASE("guideline ids are content hashes and dedup within sets") {
    const Guideline a1 = make_test_guideline("Same text.", "a");
    const Guideline a2 = make_test_guideline("Same text.", "a");
    const Guideline b = make_test_guideline("Same text.", "b");
    CHECK(a1.id == a2.id);
    CHECK(a1.id != b.id);

    GuidelineSet set;
    CHECK(set.push_back(a1));
    CHECK_FALSE(set.push_back(a2));
    CHECK(set.push_back(b));
    CHECK(set.size() == 2);

    CHECK_THROWS_AS(make_test_guideline("   ", "a"), DataError);
}

TEST_CASE("pool by_label buckets partition the ids") {
    std::mt19937_64 rng(7);
    const std::vector<std::string> labels{"x", "y", "z"};
    for (int round = 0; round < 50; ++round) {
        GuidelinePool pool;
        const int n = 1 + static_cast<int>(rng() % 20);
        for (int i = 0; i < n; ++i) {
            const auto& label = labels[rng() % labels.size()];
            pool.add(make_test_guideline("Rule " + std::to_string(rng() % 8) + ".", label));
        }
        size_t bucket_total = 0;
        std::unordered_set<std::string> seen;
        for (const auto& [label, ids] : pool.by_label()) {
            bucket_total += ids.size();
            for (const auto& id : ids) {
                CHECK(seen.insert(id).second);  // buckets are pairwise disjoint
                const Guideline* g = pool.find(id);
                REQUIRE(g != nullptr);
                CHECK(canonical_form(g->source_label) == label);
            }
        }
        CHECK(bucket_total == pool.size());
    }
}

TEST_CASE("instances and pools round-trip through JSONL") {
    ipoe::test::TempDir dir;
    const LabelSet labels({"supported", "refuted"});

    std::vector<Instance> instances;
    Instance with_explanation = ipoe::test::make_instance("a", "claim text", "supported");
    with_explanation.explanation = "study backs it";
    with_explanation.explanation_kind = ExplanationKind::natural_language;
    instances.push_back(with_explanation);
    instances.push_back(ipoe::test::make_instance("b", "another claim", "refuted"));

    const auto dataset_path = dir / "data.jsonl";
    write_instances(dataset_path, instances);
    const auto loaded = read_instances(dataset_path, labels);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].id == "a");
    CHECK(loaded[0].explanation == "study backs it");
    CHECK(loaded[0].explanation_kind == ExplanationKind::natural_language);
    CHECK_FALSE(loaded[1].explanation.has_value());

    GuidelinePool pool;
    pool.add(make_test_guideline("Check the evidence.", "supported"));
    pool.add(make_test_guideline("Check the contradiction.", "refuted"));
    const auto pool_path = dir / "pool.jsonl";
    write_pool(pool_path, pool);
    const auto loaded_pool = read_pool(pool_path);
    REQUIRE(loaded_pool.size() == 2);
    CHECK(loaded_pool.guidelines()[0].id == pool.guidelines()[0].id);
    CHECK(loaded_pool.guidelines()[0].text == "Check the evidence.");

    // Bad rows are reported with their location.
    ipoe::test::write_file(dir / "bad.jsonl", "{\"id\": \"x\", \"text\": \"t\"}\n");
    CHECK_THROWS_WITH(read_instances(dir / "bad.jsonl", labels),
                      Catch::Matchers::Contains("bad.jsonl:1"));
}

TEST_CASE("substreams count draws and fast-forward exactly") {
    Substream original(42);
    std::vector<std::uint64_t> draws;
    for (int i = 0; i < 20; ++i) draws.push_back(original.below(1000));
    CHECK(original.draws() == 20);

    Substream restored(42);
    restored.discard_to(13);
    CHECK(restored.draws() == 13);
    for (int i = 13; i < 20; ++i) CHECK(restored.below(1000) == draws[static_cast<size_t>(i)]);

    CHECK_THROWS_AS(restored.discard_to(5), std::logic_error);
}

TEST_CASE("named substreams are independent of each other") {
    RngSuite suite_a(7);
    RngSuite suite_b(7);

    // Consuming one stream never changes another stream's draws.
    suite_a.stream("sampling").below(100);
    suite_a.stream("sampling").below(100);
    const auto a_remove = suite_a.stream("remove").below(1000000);
    const auto b_remove = suite_b.stream("remove").below(1000000);
    CHECK(a_remove == b_remove);

    // Counter snapshots restore positions across a fresh suite.
    suite_a.stream("shuffle").below(10);
    const auto counters = suite_a.counters();
    RngSuite suite_c(7);
    suite_c.restore(counters);
    CHECK(suite_c.stream("sampling").below(12345) == suite_a.stream("sampling").below(12345));
    CHECK(suite_c.stream("shuffle").below(12345) == suite_a.stream("shuffle").below(12345));
}

TEST_CASE("permutations are uniform draws over the index range") {
    Substream rng(5);
    const auto perm = rng.permutation(6);
    std::vector<std::size_t> sorted = perm;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
    CHECK(rng.permutation(0).empty());
    CHECK(rng.permutation(1) == std::vector<std::size_t>{0});
}

TEST_CASE("round seeds are distinct and deterministic") {
    std::set<std::uint64_t> seeds;
    for (int round = 0; round < 16; ++round) {
        seeds.insert(round_seed(999, round));
        CHECK(round_seed(999, round) == round_seed(999, round));
    }
    CHECK(seeds.size() == 16);
}

TEST_CASE("duplicate instance ids are rejected at load") {
    ipoe::test::TempDir dir;
    const LabelSet labels({"a"});
    ipoe::test::write_file(dir / "dup.jsonl",
                           "{\"id\": \"x\", \"text\": \"one\", \"label\": \"a\"}\n"
                           "{\"id\": \"x\", \"text\": \"two\", \"label\": \"a\"}\n");
    CHECK_THROWS_WITH(read_instances(dir / "dup.jsonl", labels),
                      Catch::Matchers::Contains("duplicate instance id"));
}
