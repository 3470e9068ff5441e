#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "owl/binary_io.hpp"
#include "owl/feature_store.hpp"
#include "test_util.hpp"

using namespace owl;

namespace {

Dataset random_dataset(std::size_t n, std::size_t dim, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<LabeledSample> samples;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<float> v(dim);
        for (auto& x : v) x = static_cast<float>(rng.normal() * 3.0);
        samples.push_back({"s" + std::to_string(i), FeatureVector(std::move(v)), static_cast<ClassId>(rng.bounded(7)),
                           rng.bounded(2) ? Split::train : Split::val});
    }
    return Dataset(dim, std::move(samples));
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Exhaustive greedy herding written from the definition: at each step try
// every unused index, form the mean of the selection plus that index
// directly, and keep the first index with the smallest distance.
std::vector<std::size_t> herding_oracle(const std::vector<std::vector<double>>& pts, std::size_t budget) {
    const std::size_t dim = pts[0].size();
    std::vector<double> mu(dim, 0.0);
    for (const auto& p : pts)
        for (std::size_t d = 0; d < dim; ++d) mu[d] += p[d] / static_cast<double>(pts.size());
    std::vector<std::size_t> chosen;
    for (std::size_t step = 0; step < budget; ++step) {
        std::size_t best = pts.size();
        double best_dist = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
            auto trial = chosen;
            trial.push_back(i);
            double dist = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                double m = 0.0;
                for (auto j : trial) m += pts[j][d];
                m /= static_cast<double>(trial.size());
                dist += (mu[d] - m) * (mu[d] - m);
            }
            if (dist < best_dist) {
                best_dist = dist;
                best = i;
            }
        }
        chosen.push_back(best);
    }
    return chosen;
}

}  // namespace

TEST_CASE("FeatureVector rejects empty and non-finite values") {
    CHECK_THROWS_AS(FeatureVector({}), DataError);
    CHECK_THROWS_AS(FeatureVector({1.0f, std::numeric_limits<float>::quiet_NaN()}), DataError);
    CHECK_THROWS_AS(FeatureVector({std::numeric_limits<float>::infinity()}), DataError);
    CHECK(FeatureVector({1.0f, 2.0f}).dim() == 2);
}

TEST_CASE("Dataset validation") {
    CHECK_THROWS_AS(Dataset(2, {{"a", FeatureVector({1.0f}), 0, Split::train}}), DataError);
    CHECK_THROWS_AS(Dataset(1, {{"a", FeatureVector({1.0f}), 0, Split::train}, {"a", FeatureVector({2.0f}), 1, Split::val}}),
                    DataError);
    const Dataset d(1, {{"a", FeatureVector({1.0f}), 3, Split::train}, {"b", FeatureVector({2.0f}), 1, Split::val}});
    CHECK(d.find("b")->class_id == 1);
    CHECK(d.find("zz") == nullptr);
    CHECK(d.class_ids() == std::vector<ClassId>{1, 3});
    CHECK(d.class_ids(Split::train) == std::vector<ClassId>{3});
}

TEST_CASE("empty dataset round-trips with its dim") {
    test::TempDir dir("fs-empty");
    const Dataset d(8, {});
    write_features(d, dir / "f.owlf");
    const auto bytes = slurp(dir / "f.owlf");
    REQUIRE(bytes.size() == 16);
    CHECK(bytes.substr(0, 4) == "OWLF");
    const auto back = read_features(dir / "f.owlf");
    CHECK(back.size() == 0);
    CHECK(back.dim() == 8);
}

TEST_CASE("single sample round-trip is bit-identical") {
    test::TempDir dir("fs-one");
    const Dataset d(2, {{"x", FeatureVector({1.0f, -2.5f}), 4, Split::val}});
    write_features(d, dir / "f.owlf");
    const auto back = read_features(dir / "f.owlf");
    CHECK(back == d);
    CHECK(back.samples()[0].features[1] == -2.5f);
    CHECK(slurp(dir / "manifest.csv") == "sample_id,class_id,split,row_index\nx,4,val,0\n");
}

TEST_CASE("1000 random samples round-trip field by field") {
    test::TempDir dir("fs-many");
    const auto d = random_dataset(1000, 64, 99);
    write_features(d, dir / "f.owlf");
    const auto back = read_features(dir / "f.owlf");
    REQUIRE(back.size() == d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto& a = d.samples()[i];
        const auto& b = back.samples()[i];
        CHECK(a.sample_id == b.sample_id);
        CHECK(a.class_id == b.class_id);
        CHECK(a.split == b.split);
        CHECK(a.features == b.features);
    }
}

TEST_CASE("read_features rejects malformed files") {
    test::TempDir dir("fs-bad");
    const auto d = random_dataset(5, 3, 1);
    const auto path = dir / "f.owlf";
    write_features(d, path);
    auto bytes = io::read_file(path);

    SUBCASE("bad magic") {
        auto b = bytes;
        b[0] = 'X';
        io::write_file(path, b);
        CHECK_THROWS_AS(read_features(path), DataError);
    }
    SUBCASE("version mismatch") {
        auto b = bytes;
        b[4] = 2;
        io::write_file(path, b);
        CHECK_THROWS_AS(read_features(path), DataError);
    }
    SUBCASE("truncated payload") {
        auto b = bytes;
        b.resize(b.size() - 4);
        io::write_file(path, b);
        CHECK_THROWS_AS(read_features(path), DataError);
    }
    SUBCASE("row_index equal to count") {
        io::write_text(dir / "manifest.csv", "sample_id,class_id,split,row_index\na,0,train,5\n");
        CHECK_THROWS_AS(read_features(path), DataError);
    }
    SUBCASE("duplicate sample_id") {
        std::string m = "sample_id,class_id,split,row_index\n";
        for (int i = 0; i < 5; ++i) m += "dup,0,train," + std::to_string(i) + "\n";
        io::write_text(dir / "manifest.csv", m);
        CHECK_THROWS_AS(read_features(path), DataError);
    }
    SUBCASE("missing row") {
        io::write_text(dir / "manifest.csv", "sample_id,class_id,split,row_index\na,0,train,0\n");
        CHECK_THROWS_AS(read_features(path), DataError);
    }
    SUBCASE("bad split") {
        std::string m = "sample_id,class_id,split,row_index\n";
        for (int i = 0; i < 5; ++i) m += "s" + std::to_string(i) + ",0,test," + std::to_string(i) + "\n";
        io::write_text(dir / "manifest.csv", m);
        CHECK_THROWS_AS(read_features(path), DataError);
    }
}

TEST_CASE("synthetic spec validation") {
    SynthSpec s;
    s.num_classes = 0;
    CHECK_THROWS_AS(s.validate(), UsageError);
    s = {};
    s.within_class_stddev = 0.0;
    CHECK_THROWS_AS(s.validate(), UsageError);
    s = {};
    s.val_per_class = 0;
    CHECK_THROWS_AS(s.validate(), UsageError);
}

TEST_CASE("synthetic data is deterministic and well formed") {
    SynthSpec s;
    s.num_classes = 4;
    s.dim = 5;
    s.train_per_class = 3;
    s.val_per_class = 2;
    s.rng_seed = 17;
    const auto a = generate_synthetic(s);
    const auto b = generate_synthetic(s);
    CHECK(a == b);
    CHECK(a.size() == 20);
    CHECK(a.samples()[0].sample_id == "c0-train-0");
    CHECK(a.samples()[3].sample_id == "c0-val-0");
    s.rng_seed = 18;
    CHECK(!(generate_synthetic(s) == a));
}

TEST_CASE("synthetic draw order follows the documented stream") {
    SynthSpec s;
    s.num_classes = 2;
    s.dim = 3;
    s.train_per_class = 1;
    s.val_per_class = 1;
    s.mean_radius = 5.0;
    s.within_class_stddev = 0.5;
    s.rng_seed = 4;
    Rng rng(4);
    std::vector<std::vector<double>> means(2, std::vector<double>(3));
    for (auto& m : means) {
        double n2 = 0;
        for (auto& v : m) {
            v = rng.normal();
            n2 += v * v;
        }
        for (auto& v : m) v *= 5.0 / std::sqrt(n2);
    }
    const auto d = generate_synthetic(s);
    std::size_t k = 0;
    for (int c = 0; c < 2; ++c)
        for (int j = 0; j < 2; ++j, ++k)
            for (int i = 0; i < 3; ++i)
                CHECK(d.samples()[k].features[i] == static_cast<float>(means[c][i] + 0.5 * rng.normal()));
}

TEST_CASE("tiny stddev puts every sample on its class mean") {
    SynthSpec s;
    s.num_classes = 3;
    s.dim = 4;
    s.train_per_class = 5;
    s.val_per_class = 5;
    s.within_class_stddev = 1e-12;
    s.rng_seed = 2;
    const auto d = generate_synthetic(s);
    for (const auto& [cls, members] : d.by_class(Split::train)) {
        const auto& first = members.front()->features;
        double norm2 = 0;
        for (float v : first.values()) norm2 += double(v) * v;
        CHECK(std::sqrt(norm2) == doctest::Approx(10.0).epsilon(1e-6));
        for (const auto* m : members) CHECK(m->features == first);
    }
}

TEST_CASE("nearest-class-mean oracle separates the standard synthetic world") {
    SynthSpec s;
    s.num_classes = 10;
    s.dim = 32;
    s.train_per_class = 100;
    s.val_per_class = 50;
    s.rng_seed = 7;
    const auto d = generate_synthetic(s);
    std::map<ClassId, std::vector<double>> means;
    for (const auto& [cls, members] : d.by_class(Split::train)) {
        std::vector<double> m(32, 0.0);
        for (const auto* x : members)
            for (int i = 0; i < 32; ++i) m[i] += x->features[i] / double(members.size());
        means[cls] = m;
    }
    std::size_t correct = 0, total = 0;
    for (const auto& x : d.samples()) {
        if (x.split != Split::val) continue;
        ClassId best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (const auto& [cls, m] : means) {
            double dd = 0;
            for (int i = 0; i < 32; ++i) dd += (x.features[i] - m[i]) * (x.features[i] - m[i]);
            if (dd < best_d) {
                best_d = dd;
                best = cls;
            }
        }
        correct += best == x.class_id;
        ++total;
    }
    CHECK(double(correct) / double(total) >= 0.99);
}

TEST_CASE("herding matches the exhaustive greedy oracle on 6 points in 2-D") {
    const std::vector<std::vector<double>> pts = {{0, 0}, {4, 1}, {1, 3}, {-2, 2}, {3, -1}, {0.5, 0.5}};
    std::vector<FeatureVector> fv;
    for (const auto& p : pts) fv.emplace_back(std::vector<float>{float(p[0]), float(p[1])});
    const auto got = herding_select(fv, 3);
    CHECK(got == herding_oracle(pts, 3));
}

TEST_CASE("herding properties") {
    Rng rng(5);
    std::vector<FeatureVector> fv;
    std::vector<std::vector<double>> pts;
    for (int i = 0; i < 30; ++i) {
        std::vector<float> v(4);
        std::vector<double> p(4);
        for (int k = 0; k < 4; ++k) p[k] = v[k] = float(rng.normal());
        fv.emplace_back(v);
        pts.push_back(p);
    }
    SUBCASE("random oracle agreement") { CHECK(herding_select(fv, 10) == herding_oracle(pts, 10)); }
    SUBCASE("exhaustive budget selects everything once") {
        auto all = herding_select(fv, fv.size());
        std::sort(all.begin(), all.end());
        for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);
    }
    SUBCASE("prefix stability") {
        const auto a = herding_select(fv, 7);
        const auto b = herding_select(fv, 8);
        CHECK(std::equal(a.begin(), a.end(), b.begin()));
    }
    SUBCASE("first pick is nearest the mean") {
        std::vector<double> mu(4, 0);
        for (const auto& p : pts)
            for (int k = 0; k < 4; ++k) mu[k] += p[k] / 30.0;
        std::size_t nearest = 0;
        double nd = 1e300;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            double dd = 0;
            for (int k = 0; k < 4; ++k) dd += (pts[i][k] - mu[k]) * (pts[i][k] - mu[k]);
            if (dd < nd) {
                nd = dd;
                nearest = i;
            }
        }
        CHECK(herding_select(fv, 1).front() == nearest);
    }
    SUBCASE("budget larger than the set") { CHECK_THROWS_AS(herding_select(fv, 31), UsageError); }
}

TEST_CASE("herding ties go to the lowest index") {
    std::vector<FeatureVector> fv = {FeatureVector({1.0f}), FeatureVector({-1.0f}), FeatureVector({1.0f})};
    CHECK(herding_select(fv, 1) == std::vector<std::size_t>{0});
}
