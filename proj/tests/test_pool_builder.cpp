#include <catch2/catch.hpp>

#include <algorithm>

#include "ipoe/pool_builder.hpp"

#include "helpers.hpp"

using namespace ipoe;
using ipoe::test::make_instance;

namespace {

// Scripted generation backend: explanations echo a fixed text, guideline
// requests answer per instance text.
ScriptedBackend generation_backend() {
    std::vector<ScriptedRule> rules;

    auto add_rule = [&](std::vector<std::string> contains, std::string response) {
        ScriptedRule rule;
        rule.contains = std::move(contains);
        rule.response = std::move(response);
        rules.push_back(std::move(rule));
    };

    add_rule({"Provide a brief explanation", "broken item"}, "no envelope at all");
    add_rule({"Provide a brief explanation"}, "{\"explanation\": \"E\"}");
    add_rule({"rule-based guideline", "first item"}, "{\"guideline\": \"Rule for first.\"}");
    add_rule({"rule-based guideline", "second item"}, "{\"guideline\": \"Rule for second.\"}");
    add_rule({"rule-based guideline", "third item"}, "{\"guideline\": \"Rule for third.\"}");
    add_rule({"rule-based guideline", "broken item"}, "prose with no json");
    add_rule({"rule-based guideline", "empty item"}, "{\"guideline\": \"  \"}");
    add_rule({"rule-based guideline"}, "{\"guideline\": \"Generic rule.\"}");

    return ScriptedBackend(std::move(rules), "(unmatched)");
}

PoolBuildOptions human_options() {
    PoolBuildOptions opts;
    opts.source = PoolSource::human;
    opts.kind = ExplanationKind::natural_language;
    opts.task_name = "emotion classification";
    return opts;
}

Instance explained(std::string id, std::string text, std::string label,
                   std::string explanation) {
    Instance inst = make_instance(std::move(id), std::move(text), std::move(label));
    inst.explanation = std::move(explanation);
    inst.explanation_kind = ExplanationKind::natural_language;
    return inst;
}

}  // namespace

TEST_CASE("explanation generation unwraps the structured envelope") {
    ScriptedBackend backend = generation_backend();
    PoolBuilder builder(backend, MetaPrompts{}, human_options());

    const Instance inst = make_instance("i1", "first item", "joy");
    const LabelSet labels({"joy", "boredom"});
    CHECK(builder.generate_explanation(inst, ExplanationKind::natural_language) == "E");
}

TEST_CASE("unparsable generation output raises after bounded re-asks") {
    ScriptedBackend backend = generation_backend();
    PoolBuilder builder(backend, MetaPrompts{}, human_options());

    const Instance inst = make_instance("i1", "broken item", "joy");
    CHECK_THROWS_AS(builder.generate_explanation(inst, ExplanationKind::natural_language),
                    GenerationParseError);
    // Initial ask plus two re-asks.
    CHECK(backend.call_count() == 3);

    backend.reset_call_count();
    CHECK_THROWS_AS(
        builder.generate_guideline(inst, "some explanation", ExplanationKind::natural_language,
                                   ExplanationSource::human),
        GenerationParseError);
    CHECK(backend.call_count() == 3);
}

TEST_CASE("blank guideline output counts as a parse failure") {
    ScriptedBackend backend = generation_backend();
    PoolBuilder builder(backend, MetaPrompts{}, human_options());
    const Instance inst = make_instance("i1", "empty item", "joy");
    CHECK_THROWS_AS(
        builder.generate_guideline(inst, "why", ExplanationKind::natural_language,
                                   ExplanationSource::human),
        GenerationParseError);
}

TEST_CASE("generated guidelines carry the instance gold label and provenance") {
    ScriptedBackend backend = generation_backend();
    PoolBuilder builder(backend, MetaPrompts{}, human_options());

    const Instance inst = make_instance("i7", "second item", "Boredom");
    const Guideline g = builder.generate_guideline(inst, "repetitive chore",
                                                   ExplanationKind::natural_language,
                                                   ExplanationSource::human);
    CHECK(g.text == "Rule for second.");
    CHECK(g.source_label == "Boredom");
    CHECK(g.provenance.instance_id == "i7");
    CHECK(g.provenance.explanation_source == ExplanationSource::human);
    CHECK(g.provenance.explanation_kind == ExplanationKind::natural_language);
    CHECK(g.id == guideline_id("Rule for second.", "Boredom"));
}

TEST_CASE("human-source pool build uses zero explanation calls and skips unexplained") {
    ScriptedBackend backend = generation_backend();
    PoolBuilder builder(backend, MetaPrompts{}, human_options());
    const LabelSet labels({"joy", "anger"});

    std::vector<Instance> dataset{
        explained("a", "first item", "joy", "felt great"),
        explained("b", "second item", "anger", "felt bad"),
        explained("c", "third item", "joy", "felt fine"),
        make_instance("d", "no explanation item", "joy"),
    };

    const PoolBuildResult result = builder.build_pool(dataset, labels);
    CHECK(result.pool.size() == 3);
    CHECK(result.processed == 3);
    CHECK(result.skipped == 1);
    // One guideline call per explained instance, no explanation calls.
    CHECK(backend.call_count() == 3);

    CHECK(result.pool.by_label().at("joy").size() == 2);
    CHECK(result.pool.by_label().at("anger").size() == 1);
    for (const auto& g : result.pool.guidelines()) {
        const auto* src = [&]() -> const Instance* {
            for (const auto& inst : dataset)
                if (inst.id == g.provenance.instance_id) return &inst;
            return nullptr;
        }();
        REQUIRE(src != nullptr);
        CHECK(g.source_label == src->gold_label);
    }
}

TEST_CASE("llm-source pool build generates explanations first") {
    ScriptedBackend backend = generation_backend();
    PoolBuildOptions opts = human_options();
    opts.source = PoolSource::llm;
    PoolBuilder builder(backend, MetaPrompts{}, opts);
    const LabelSet labels({"joy"});

    std::vector<Instance> dataset{make_instance("a", "first item", "joy"),
                                  make_instance("b", "second item", "joy")};
    const PoolBuildResult result = builder.build_pool(dataset, labels);
    CHECK(result.pool.size() == 2);
    // One explanation call plus one guideline call per instance.
    CHECK(backend.call_count() == 4);
}

TEST_CASE("identical guideline text and label dedup to one pool entry") {
    ScriptedBackend backend = generation_backend();
    PoolBuilder builder(backend, MetaPrompts{}, human_options());
    const LabelSet labels({"joy"});

    // Both instances hit the generic rule, producing identical text+label.
    std::vector<Instance> dataset{explained("a", "same generic one", "joy", "x"),
                                  explained("b", "same generic two", "joy", "y")};
    const PoolBuildResult result = builder.build_pool(dataset, labels);
    CHECK(result.pool.size() == 1);
    CHECK(result.deduplicated == 1);
}

TEST_CASE("a persistently unparsable instance is skipped, not fatal") {
    ScriptedBackend backend = generation_backend();
    PoolBuilder builder(backend, MetaPrompts{}, human_options());
    const LabelSet labels({"joy"});

    std::vector<Instance> dataset{
        explained("a", "first item", "joy", "x"),
        explained("b", "second item", "joy", "y"),
        explained("c", "third item", "joy", "z"),
        explained("d", "broken item", "joy", "w"),
    };
    const PoolBuildResult result = builder.build_pool(dataset, labels);
    CHECK(result.pool.size() == 3);
    CHECK(result.skipped == 1);
    REQUIRE(result.skip_reasons.size() == 1);
    CHECK_THAT(result.skip_reasons[0], Catch::Matchers::Contains("instance d"));
}

TEST_CASE("pool contents are order-independent up to ids") {
    const LabelSet labels({"joy", "anger"});
    std::vector<Instance> dataset{
        explained("a", "first item", "joy", "x"),
        explained("b", "second item", "anger", "y"),
        explained("c", "third item", "joy", "z"),
    };

    auto ids_of = [&](const std::vector<Instance>& data) {
        ScriptedBackend backend = generation_backend();
        PoolBuilder builder(backend, MetaPrompts{}, human_options());
        const PoolBuildResult result = builder.build_pool(data, labels);
        auto ids = std::vector<std::string>{};
        for (const auto& g : result.pool.guidelines()) ids.push_back(g.id);
        std::sort(ids.begin(), ids.end());
        return ids;
    };

    auto reversed = dataset;
    std::reverse(reversed.begin(), reversed.end());
    CHECK(ids_of(dataset) == ids_of(reversed));
}

TEST_CASE("mixed source prefers human explanations and generates the rest") {
    ScriptedBackend backend = generation_backend();
    PoolBuildOptions opts = human_options();
    opts.source = PoolSource::mixed;
    PoolBuilder builder(backend, MetaPrompts{}, opts);
    const LabelSet labels({"joy"});

    std::vector<Instance> dataset{explained("a", "first item", "joy", "human says"),
                                  make_instance("b", "second item", "joy")};
    const PoolBuildResult result = builder.build_pool(dataset, labels);
    CHECK(result.pool.size() == 2);
    // a: one guideline call; b: one explanation + one guideline call.
    CHECK(backend.call_count() == 3);

    for (const auto& g : result.pool.guidelines()) {
        if (g.provenance.instance_id == "a")
            CHECK(g.provenance.explanation_source == ExplanationSource::human);
        if (g.provenance.instance_id == "b")
            CHECK(g.provenance.explanation_source == ExplanationSource::llm);
    }
}

TEST_CASE("empty pool is an error") {
    ScriptedBackend backend = generation_backend();
    PoolBuilder builder(backend, MetaPrompts{}, human_options());
    const LabelSet labels({"joy"});
    std::vector<Instance> dataset{make_instance("a", "first item", "joy")};  // no explanation
    CHECK_THROWS_AS(builder.build_pool(dataset, labels), DataError);
}

TEST_CASE("sampled decode defaults match the experimental settings") {
    const DecodeConfig sampled = DecodeConfig::sampled();
    CHECK(sampled.top_p == Approx(0.9));
    CHECK(sampled.temperature == Approx(0.6));
    CHECK(sampled.top_k == 50);
    CHECK(DecodeConfig::greedy().mode == DecodeMode::greedy);
}

TEST_CASE("the worked emotion example replays through the builder verbatim") {
    // The dishes instance with an LLM-written explanation; the backend is
    // scripted to answer with the published guideline text.
    const std::string instance_text = "I felt ... when I had to do the dishes earlier.";
    const std::string explanation =
        "The label 'boredom' was chosen because the text describes a mundane and routine task "
        "(doing the dishes) without any strong emotional connotation or excitement. This "
        "suggests a lack of engagement or interest, which is characteristic of boredom.";
    const std::string guideline_text =
        "When classifying emotions in text, select the label 'boredom' if the text describes a "
        "mundane or routine task with a lack of strong emotional connotation or excitement, "
        "suggesting a lack of engagement or interest.";

    std::vector<ScriptedRule> rules;
    {
        ScriptedRule explain;
        explain.contains = {"Provide a brief explanation", instance_text};
        explain.response = "{\"explanation\": \"" + explanation + "\"}";
        rules.push_back(std::move(explain));
    }
    ScriptedRule rule;
    rule.contains = {"rule-based guideline", instance_text};
    rule.response = "{\"guideline\": \"" + guideline_text + "\"}";
    rules.push_back(rule);
    ScriptedBackend backend(std::move(rules), "(unmatched)");

    PoolBuildOptions opts = human_options();
    opts.task_name = "emotion classification";
    PoolBuilder builder(backend, MetaPrompts{}, opts);

    Instance inst = make_instance("dishes", instance_text, "boredom");
    inst.explanation = explanation;
    inst.explanation_kind = ExplanationKind::natural_language;

    const LabelSet labels({"boredom", "joy"});
    const PoolBuildResult result = builder.build_pool({inst}, labels);
    REQUIRE(result.pool.size() == 1);
    CHECK(result.pool.guidelines()[0].text == guideline_text);
    CHECK(result.pool.guidelines()[0].source_label == "boredom");
    CHECK_THAT(result.pool.guidelines()[0].text,
               Catch::Matchers::Contains("mundane or routine task"));

    // Generated explanations for this instance land in the same class of
    // wording (routine/mundane chore).
    Instance bare = inst;
    bare.explanation.reset();
    bare.explanation_kind.reset();
    const std::string generated =
        builder.generate_explanation(bare, ExplanationKind::natural_language);
    CHECK_THAT(generated, Catch::Matchers::Contains("mundane and routine task"));
}

TEST_CASE("an unbound template placeholder is a configuration error") {
    MetaPromptTemplate tmpl{MetaPromptKind::explain_natural, "Text: {text}\nLabel: {label}"};
    CHECK_THROWS_AS(tmpl.render({{"text", "T"}}), ConfigError);
    CHECK(tmpl.render({{"text", "T"}, {"label", "L"}}) == "Text: T\nLabel: L");

    // Literal braces that are not lower_snake tokens pass through.
    MetaPromptTemplate json_like{MetaPromptKind::structured_system, "{\n  \"{field}\": 1\n}"};
    CHECK(json_like.render({{"field", "x"}}) == "{\n  \"x\": 1\n}");
}
