#include <doctest.h>

#include <numeric>
#include <sstream>

#include "owl/protocol.hpp"

using namespace owl;
using namespace owl::protocol;

namespace {

Dataset synth(std::size_t classes, std::size_t train, std::size_t val, std::uint64_t seed, std::size_t dim = 12) {
    SynthSpec s;
    s.num_classes = classes;
    s.dim = dim;
    s.train_per_class = train;
    s.val_per_class = val;
    s.rng_seed = seed;
    return generate_synthetic(s);
}

ProtocolConfig base_config(Mode mode, std::size_t initial, std::size_t step, std::size_t total = 0) {
    ProtocolConfig c;
    c.mode = mode;
    c.preset = SchedulePreset{initial, step, total, false};
    c.learner_config.evm.exemplars_per_class = 10;
    c.seed = 7;
    return c;
}

TaggedVector tagged(const Dataset& d, const std::string& id) {
    const auto* s = d.find(id);
    REQUIRE(s != nullptr);
    return {s->sample_id, s->features};
}

std::vector<ClassId> iota_ids(std::size_t n) {
    std::vector<ClassId> ids(n);
    std::iota(ids.begin(), ids.end(), ClassId{0});
    return ids;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> fields;
        std::string f;
        std::istringstream ls(line);
        while (std::getline(ls, f, ',')) fields.push_back(f);
        if (!line.empty() && line.back() == ',') fields.emplace_back();
        rows.push_back(fields);
    }
    return rows;
}

}  // namespace

TEST_CASE("make_schedule splits classes into phases") {
    const auto ids = iota_ids(100);
    const auto s = make_schedule(ids, 50, 5, 100, Mode::incremental);
    REQUIRE(s.initial_classes.size() == 50);
    REQUIRE(s.phases.size() == 10);
    CHECK(s.phases[0] == std::vector<ClassId>{50, 51, 52, 53, 54});
    CHECK(s.phases[9].back() == 99);

    const auto partial = make_schedule(ids, 3, 4, 13, Mode::openworld);
    REQUIRE(partial.phases.size() == 3);
    CHECK(partial.phases[2] == std::vector<ClassId>{11, 12});
    CHECK(partial.mode == Mode::openworld);

    CHECK(make_schedule(ids, 100, 5, 0, Mode::incremental).phases.empty());

    const auto a = make_schedule(ids, 10, 10, 0, Mode::incremental, 3);
    const auto b = make_schedule(ids, 10, 10, 0, Mode::incremental, 3);
    CHECK(a == b);
    CHECK(a.initial_classes != s.initial_classes);

    CHECK_THROWS_AS(make_schedule(ids, 0, 5, 0, Mode::incremental), UsageError);
    CHECK_THROWS_AS(make_schedule(ids, 10, 0, 0, Mode::incremental), UsageError);
    CHECK_THROWS_AS(make_schedule(ids, 10, 5, 101, Mode::incremental), UsageError);
    CHECK_THROWS_AS(make_schedule(ids, 20, 5, 10, Mode::incremental), UsageError);
}

TEST_CASE("named presets") {
    CHECK(named_preset("ow100", 5) == SchedulePreset{50, 5, 100, false});
    CHECK(named_preset("ow500", 25) == SchedulePreset{50, 25, 500, false});
    CHECK_THROWS_AS(named_preset("ow7", 5), UsageError);
}

TEST_CASE("schedule validation") {
    const auto d = synth(4, 3, 2, 1);
    PhaseSchedule s{{0, 1}, {{2}, {3}}, Mode::incremental};
    CHECK_NOTHROW(s.validate(d));
    CHECK_THROWS_AS((PhaseSchedule{{0, 1}, {{1}}, Mode::incremental}.validate(d)), UsageError);
    CHECK_THROWS_AS((PhaseSchedule{{0, 1}, {{}}, Mode::incremental}.validate(d)), UsageError);
    CHECK_THROWS_AS((PhaseSchedule{{}, {{1}}, Mode::incremental}.validate(d)), UsageError);
    CHECK_THROWS_AS((PhaseSchedule{{0, 9}, {}, Mode::incremental}.validate(d)), DataError);
}

TEST_CASE("annotator") {
    const auto d = synth(4, 5, 2, 2);
    const std::set<ClassId> known{0, 1};

    SUBCASE("buffer of known-class samples yields nothing") {
        Annotator a(d);
        const auto out = a.annotate({tagged(d, "c0-train-0"), tagged(d, "c1-train-3")}, known);
        CHECK(out.empty());
        CHECK(a.withheld().empty());
    }
    SUBCASE("three samples of one class pass through") {
        Annotator a(d);
        const auto out =
            a.annotate({tagged(d, "c2-train-0"), tagged(d, "c2-train-1"), tagged(d, "c2-train-2")}, known);
        REQUIRE(out.size() == 1);
        REQUIRE(out.at(2).size() == 3);
        CHECK(out.at(2)[1].sample_id == "c2-train-1");
    }
    SUBCASE("a single sample is carried over") {
        Annotator a(d);
        CHECK(a.annotate({tagged(d, "c3-train-0"), tagged(d, "c0-train-0")}, known).empty());
        REQUIRE(a.withheld().at(3).size() == 1);
        const auto out = a.annotate({tagged(d, "c3-train-1"), tagged(d, "c3-train-2")}, known);
        REQUIRE(out.size() == 1);
        CHECK(out.at(3).size() == 3);
        CHECK(a.withheld().empty());
    }
    SUBCASE("a repeated sample id counts once") {
        Annotator a(d);
        CHECK(a.annotate({tagged(d, "c3-train-0")}, known).empty());
        CHECK(a.annotate({tagged(d, "c3-train-0")}, known).empty());
        CHECK(a.withheld().at(3).size() == 1);
    }
    SUBCASE("withheld class that became known is dropped") {
        Annotator a(d);
        CHECK(a.annotate({tagged(d, "c3-train-0")}, known).empty());
        CHECK(a.annotate({}, {0, 1, 3}).empty());
        CHECK(a.withheld().empty());
    }
    SUBCASE("min_samples_per_class = 1 releases singletons") {
        Annotator a(d, 1);
        CHECK(a.annotate({tagged(d, "c3-train-0")}, known).at(3).size() == 1);
    }
    SUBCASE("errors") {
        Annotator a(d);
        CHECK_THROWS_AS(a.annotate({{"nope", FeatureVector({1.0f})}}, known), DataError);
        CHECK_THROWS_AS(Annotator(d, 0), UsageError);
    }
}

TEST_CASE("initialization") {
    const auto d = synth(2, 40, 20, 5);
    ProtocolConfig c;
    c.learner_config.evm.tailsize = 20;

    SUBCASE("one class has no negatives") {
        const PhaseSchedule s{{0}, {}, Mode::incremental};
        CHECK_THROWS_AS(run_initialization(s, d, c), DataError);
    }
    SUBCASE("two classes") {
        const PhaseSchedule s{{0, 1}, {}, Mode::incremental};
        const auto agent = run_initialization(s, d, c);
        CHECK(agent.known_classes() == std::set<ClassId>{0, 1});
        const auto e = run_evaluation_phase(agent, d, s, 0, std::nullopt);
        REQUIRE(e.metrics.top1);
        CHECK(*e.metrics.top1 >= 0.99);
        CHECK(e.metrics.n_known_samples == 40);
        CHECK(e.metrics.n_unknown_samples == 0);
    }
}

TEST_CASE("no operational phases gives a single report") {
    const auto d = synth(4, 20, 5, 6);
    auto c = base_config(Mode::incremental, 4, 1);
    const auto r = run_full(c, d);
    REQUIRE(r.reports.size() == 1);
    CHECK(r.reports[0].phase == 0);
    CHECK(r.reports[0].enrolled.empty());
    CHECK(r.summary.average_top1 == *r.reports[0].metrics.top1);
    CHECK_FALSE(r.summary.average_uda);
}

TEST_CASE("phase index out of range") {
    const auto d = synth(4, 10, 5, 6);
    const auto c = base_config(Mode::openworld, 2, 1);
    const auto s = resolve_schedule(c, d);
    auto agent = run_initialization(s, d, c);
    Annotator a(d);
    CHECK_THROWS_AS(run_operational_phase(agent, a, s, d, 0, c), UsageError);
    CHECK_THROWS_AS(run_operational_phase(agent, a, s, d, 3, c), UsageError);
}

TEST_CASE("open world with delta 0 detects nothing") {
    const auto d = synth(8, 20, 5, 8);
    auto c = base_config(Mode::openworld, 4, 2);
    c.delta = 0.0;
    const auto r = run_full(c, d);
    REQUIRE(r.reports.size() == 3);
    for (const auto& rep : r.reports) {
        CHECK(rep.detected == 0);
        CHECK(rep.enrolled.empty());
        CHECK(rep.n_known_classes == 4);
        if (rep.metrics.uda) CHECK(*rep.metrics.uda == 0.0);
    }
    CHECK(r.agent.known_classes().size() == 4);
}

TEST_CASE("open world with the reject-all threshold enrolls every U_n") {
    const auto d = synth(8, 20, 5, 8);
    for (double delta : {1.0, reject_all_threshold()}) {
        auto c = base_config(Mode::openworld, 4, 2);
        c.delta = delta;
        const auto r = run_full(c, d);
        REQUIRE(r.reports.size() == 3);
        for (std::size_t n = 1; n < r.reports.size(); ++n) {
            auto expected = r.schedule.phases[n - 1];
            std::sort(expected.begin(), expected.end());
            CHECK(r.reports[n].enrolled == expected);
            CHECK(r.reports[n].n_known_classes == 4 + 2 * n);
            CHECK(r.reports[n].detected >= 40);
        }
    }
}

TEST_CASE("evaluation does not modify the agent") {
    const auto d = synth(6, 20, 5, 9);
    auto c = base_config(Mode::openworld, 3, 3);
    c.delta = 0.5;
    const auto s = resolve_schedule(c, d);
    const auto agent = run_initialization(s, d, c);
    const auto before = agent.class_scores(d.samples().front().features.values());
    const auto e1 = run_evaluation_phase(agent, d, s, 0, 0.5);
    const auto e2 = run_evaluation_phase(agent, d, s, 0, 0.5);
    CHECK(e1.metrics == e2.metrics);
    CHECK(e1.delta == e2.delta);
    CHECK(agent.delta() == 0.5);
    CHECK(agent.buffer().empty());
    const auto after = agent.class_scores(d.samples().front().features.values());
    REQUIRE(before.size() == after.size());
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i].probability == after[i].probability);

    CHECK(e1.metrics.n_known_samples == 15);
    CHECK(e1.metrics.n_unknown_samples == 15);
    for (const auto& id : e1.sample_ids) CHECK(id.find("-val-") != std::string::npos);
    REQUIRE(e1.metrics.uda);
    CHECK(*e1.metrics.uda >= 0.5);
}

TEST_CASE("OW-100 shaped run has 11 records") {
    const auto d = synth(100, 8, 4, 10, 8);
    auto c = base_config(Mode::incremental, 50, 5, 100);
    c.learner_config.evm.exemplars_per_class = 2;
    c.learner_config.evm.tailsize = 20;
    const auto r = run_full(c, d);
    REQUIRE(r.reports.size() == 11);
    for (std::size_t n = 0; n < 11; ++n) {
        CHECK(r.reports[n].phase == n);
        CHECK(r.reports[n].n_known_classes == 50 + 5 * n);
        CHECK(r.reports[n].metrics.n_known_samples == 4 * (50 + 5 * n));
        CHECK(r.reports[n].enrolled.size() == (n == 0 ? 0u : 5u));
    }
    const auto rows = parse_csv(report_csv(r.reports));
    CHECK(rows.size() == 12);
}

TEST_CASE("incremental run matches direct enrollment") {
    const auto d = synth(9, 15, 5, 11);
    for (auto kind : {LearnerKind::evm, LearnerKind::perceptron}) {
        auto c = base_config(Mode::incremental, 3, 3);
        c.learner = kind;
        c.learner_config.mlp.epochs = 20;
        const auto r = run_full(c, d);

        const auto s = resolve_schedule(c, d);
        const auto groups = d.by_class(Split::train);
        const auto data_for = [&](const std::vector<ClassId>& ids) {
            std::map<ClassId, std::vector<TaggedVector>> out;
            for (ClassId id : ids)
                for (const auto* smp : groups.at(id)) out[id].push_back({smp->sample_id, smp->features});
            return out;
        };
        auto agent = OwlAgent::initialize(kind, data_for(s.initial_classes), d.dim(), effective_learner_config(c), 0.0);
        for (const auto& phase : s.phases) agent.enroll(data_for(phase));

        CHECK(agent.known_classes() == r.agent.known_classes());
        for (std::size_t i = 0; i < d.size(); i += 7) {
            const auto q = d.samples()[i].features.values();
            const auto x = agent.class_scores(q);
            const auto y = r.agent.class_scores(q);
            REQUIRE(x.size() == y.size());
            for (std::size_t k = 0; k < x.size(); ++k) {
                CHECK(x[k].class_id == y[k].class_id);
                CHECK(x[k].probability == y[k].probability);
            }
        }
    }
}

TEST_CASE("reports are deterministic") {
    const auto d = synth(10, 15, 5, 12);
    for (auto kind : {LearnerKind::evm, LearnerKind::perceptron}) {
        auto c = base_config(Mode::openworld, 4, 3);
        c.learner = kind;
        c.learner_config.mlp.epochs = 10;
        c.target_uda = 0.5;
        const auto a = run_full(c, d);
        const auto b = run_full(c, d);
        CHECK(report_csv(a.reports) == report_csv(b.reports));
        CHECK(render_table(a.reports, "t") == render_table(b.reports, "t"));
    }
}

TEST_CASE("report CSV and summary averages") {
    const auto d = synth(10, 15, 5, 13);
    auto c = base_config(Mode::openworld, 4, 2);
    c.target_uda = 0.5;
    const auto r = run_full(c, d);
    const auto rows = parse_csv(report_csv(r.reports));
    REQUIRE(rows.size() == r.reports.size() + 1);
    CHECK(rows[0] == std::vector<std::string>{"phase", "n_known", "n_unknown", "cwca", "uda", "owca", "detected",
                                              "enrolled"});

    double cw = 0.0, ow = 0.0, ud = 0.0;
    std::size_t n_cw = 0, n_ow = 0, n_ud = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        REQUIRE(rows[i].size() == 8);
        const auto& rep = r.reports[i - 1];
        CHECK(std::stoul(rows[i][0]) == rep.phase);
        CHECK(std::stoul(rows[i][1]) == rep.metrics.n_known_samples);
        CHECK(std::stoul(rows[i][2]) == rep.metrics.n_unknown_samples);
        CHECK(std::stoul(rows[i][6]) == rep.detected);
        CHECK(std::stoul(rows[i][7]) == rep.enrolled.size());
        if (!rows[i][3].empty()) cw += std::stod(rows[i][3]), ++n_cw;
        if (!rows[i][4].empty()) ud += std::stod(rows[i][4]), ++n_ud;
        if (!rows[i][5].empty()) ow += std::stod(rows[i][5]), ++n_ow;
    }
    CHECK(rows.back()[4].empty());
    REQUIRE(r.summary.average_cwca);
    REQUIRE(r.summary.average_uda);
    REQUIRE(r.summary.average_owca);
    CHECK(*r.summary.average_cwca == doctest::Approx(cw / static_cast<double>(n_cw)).epsilon(1e-12));
    CHECK(*r.summary.average_uda == doctest::Approx(ud / static_cast<double>(n_ud)).epsilon(1e-12));
    CHECK(*r.summary.average_owca == doctest::Approx(ow / static_cast<double>(n_ow)).epsilon(1e-12));
    for (const auto& rep : r.reports)
        if (rep.metrics.n_unknown_samples > 0) CHECK(*rep.metrics.uda >= 0.5);
}

TEST_CASE("format_double round-trips") {
    for (double v : {0.0, 0.1, 1.0 / 3.0, 1e-300, 0.65, reject_all_threshold()})
        CHECK(std::stod(format_double(v)) == v);
    CHECK(format_double(0.6) == "0.6");
}

TEST_CASE("config validation") {
    ProtocolConfig c;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c.initial_classes = {0, 1};
    CHECK_NOTHROW(c.validate());
    c.delta = 1.5;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c.delta = reject_all_threshold();
    CHECK_NOTHROW(c.validate());
    c.target_uda = -0.1;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c.target_uda = 0.5;
    c.min_samples_per_class = 0;
    CHECK_THROWS_AS(c.validate(), UsageError);
}

TEST_CASE("perceptron seed comes from the protocol seed") {
    ProtocolConfig a;
    a.seed = 1;
    ProtocolConfig b = a;
    b.seed = 2;
    a.learner_config.mlp.rng_seed = 12345;
    CHECK(effective_learner_config(a).mlp.rng_seed == derive_seed(1, kStreamPerceptron));
    CHECK(effective_learner_config(a).mlp.rng_seed != effective_learner_config(b).mlp.rng_seed);
}
