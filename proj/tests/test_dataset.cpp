#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "patchnet/dataset.hpp"
#include "patchnet/netpbm.hpp"
#include "patchnet/rng.hpp"

using namespace patchnet;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    static int counter = 0;
    fs::path dir = fs::temp_directory_path() /
                   ("patchnet_dataset_" + std::to_string(::getpid()) + "_" +
                    std::to_string(counter++));
    fs::create_directories(dir);
    return dir;
}

bool samples_equal(const Sample& a, const Sample& b) {
    if (a.id != b.id || a.split != b.split || a.labels != b.labels) return false;
    if (a.image.side != b.image.side || a.image.px != b.image.px) return false;
    if (a.masks.size() != b.masks.size()) return false;
    for (size_t i = 0; i < a.masks.size(); ++i) {
        if (a.masks[i].side != b.masks[i].side || a.masks[i].px != b.masks[i].px) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("generator is deterministic in the seed") {
    SyntheticSpec spec;
    std::vector<Sample> a = generate(spec, 20, 9, Split::train);
    std::vector<Sample> b = generate(spec, 20, 9, Split::train);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(samples_equal(a[i], b[i]));

    std::vector<Sample> c = generate(spec, 20, 10, Split::train);
    bool any_diff = false;
    for (size_t i = 0; i < a.size(); ++i) any_diff = any_diff || !samples_equal(a[i], c[i]);
    CHECK(any_diff);
}

TEST_CASE("split contents do not depend on other splits' sizes") {
    SyntheticSpec spec;
    std::vector<Sample> small = generate_dataset(spec, DatasetCounts{4, 2, 2}, 5);
    std::vector<Sample> large = generate_dataset(spec, DatasetCounts{8, 2, 2}, 5);
    // test split samples are identical regardless of the train count
    std::vector<const Sample*> small_test, large_test;
    for (const Sample& s : small)
        if (s.split == Split::test) small_test.push_back(&s);
    for (const Sample& s : large)
        if (s.split == Split::test) large_test.push_back(&s);
    REQUIRE(small_test.size() == large_test.size());
    for (size_t i = 0; i < small_test.size(); ++i) {
        CHECK(samples_equal(*small_test[i], *large_test[i]));
    }
}

TEST_CASE("positive samples carry non-empty masks containing the evidence peak") {
    SyntheticSpec spec;
    std::vector<Sample> samples = generate(spec, 60, 11, Split::train);
    int checked = 0;
    for (const Sample& s : samples) {
        for (int c = 0; c < spec.num_classes; ++c) {
            if (!s.labels[c]) {
                if (c < static_cast<int>(s.masks.size()) && s.masks[c].present()) {
                    CHECK(s.masks[c].area() == 0);
                }
                continue;
            }
            REQUIRE(s.masks[c].present());
            CHECK(s.masks[c].any());
            ++checked;
        }
        // The blob class (0) is the brightest smooth structure: when only the
        // blob is present, the brightest pixel must fall inside its mask.
        if (s.labels[0] && !s.labels[1] && !s.labels[2] && !s.labels[3]) {
            size_t argmax = 0;
            for (size_t i = 1; i < s.image.px.size(); ++i) {
                if (s.image.px[i] > s.image.px[argmax]) argmax = i;
            }
            CHECK(s.masks[0].px[argmax] == 1);
        }
    }
    CHECK(checked > 0);
}

TEST_CASE("image values live in [0,1] and sit on the 16-bit grid") {
    SyntheticSpec spec;
    std::vector<Sample> samples = generate(spec, 5, 12, Split::valid);
    for (const Sample& s : samples) {
        for (double v : s.image.px) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            const double q = std::lround(v * 65535.0) / 65535.0;
            CHECK(v == q);
        }
    }
}

TEST_CASE("prevalence matches the configured rate within the binomial interval") {
    SyntheticSpec spec;
    spec.prevalence = 0.5;
    std::vector<Sample> samples = generate(spec, 1000, 13, Split::train);
    size_t positives = 0;
    for (const Sample& s : samples) positives += s.labels[0];
    const double fraction = static_cast<double>(positives) / samples.size();
    CHECK(fraction >= 0.44);  // 99% binomial interval around 0.5 at n=1000
    CHECK(fraction <= 0.56);
}

TEST_CASE("marker signature sits flush in a corner") {
    SyntheticSpec spec;
    std::vector<Sample> samples = generate(spec, 40, 14, Split::train);
    const int S = spec.image_side;
    const int m = spec.marker_side;
    bool found = false;
    for (const Sample& s : samples) {
        if (!s.labels[2]) continue;
        found = true;
        const Mask& mask = s.masks[2];
        CHECK(mask.area() == static_cast<size_t>(m) * m);
        // Every masked pixel lies in one of the four m x m corner squares.
        for (int y = 0; y < S; ++y) {
            for (int x = 0; x < S; ++x) {
                if (!mask.at(y, x)) continue;
                const bool corner_y = y < m || y >= S - m;
                const bool corner_x = x < m || x >= S - m;
                CHECK(corner_y);
                CHECK(corner_x);
            }
        }
    }
    CHECK(found);
}

TEST_CASE("synthetic spec validation") {
    SyntheticSpec spec;
    spec.num_classes = 2;  // signatures still has 4 entries
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = SyntheticSpec{};
    spec.prevalence = 1.5;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = SyntheticSpec{};
    spec.shortcut_class = 0;  // blob signature, not marker
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    CHECK_THROWS_AS(generate(SyntheticSpec{}, 0, 1, Split::train), ConfigError);
}

TEST_CASE("pgm round trip is exact for 16-bit data") {
    const fs::path dir = temp_dir();
    const std::string path = (dir / "img.pgm").string();
    Rng rng(15);
    std::vector<uint16_t> px(16 * 16);
    for (uint16_t& v : px) v = static_cast<uint16_t>(rng.next_u64() % 65536);
    write_pgm16(path, 16, 16, px);
    PgmImage back = read_pgm(path);
    CHECK(back.width == 16);
    CHECK(back.height == 16);
    CHECK(back.maxval == 65535);
    CHECK(back.px == px);

    // The float image path also round trips: grid values survive.
    Image img = Image::zeros(8);
    for (size_t i = 0; i < img.px.size(); ++i) img.px[i] = (i % 200) / 199.0;
    for (double& v : img.px) v = std::lround(v * 65535.0) / 65535.0;
    write_image_pgm((dir / "f.pgm").string(), img);
    Image fback = pgm_to_image(read_pgm((dir / "f.pgm").string()));
    CHECK(fback.px == img.px);
    fs::remove_all(dir);
}

TEST_CASE("mask PGM values {0,255} binarize to {0,1}") {
    const fs::path dir = temp_dir();
    const std::string path = (dir / "mask.pgm").string();
    std::vector<uint8_t> px = {0, 255, 0, 255, 255, 0, 0, 0, 255};
    write_pgm8(path, 3, 3, px);
    Mask m = pgm_to_mask(read_pgm(path));
    CHECK(m.area() == 4);
    for (size_t i = 0; i < px.size(); ++i) CHECK(m.px[i] == (px[i] ? 1 : 0));
    fs::remove_all(dir);
}

TEST_CASE("pgm reader rejects malformed and truncated files") {
    const fs::path dir = temp_dir();
    {
        std::ofstream out(dir / "bad_magic.pgm", std::ios::binary);
        out << "P3\n2 2\n255\n";
    }
    CHECK_THROWS_AS(read_pgm((dir / "bad_magic.pgm").string()), IoError);
    {
        std::ofstream out(dir / "trunc.pgm", std::ios::binary);
        out << "P5\n4 4\n255\n";
        out << "abc";  // 3 of 16 bytes
    }
    CHECK_THROWS_AS(read_pgm((dir / "trunc.pgm").string()), IoError);
    CHECK_THROWS_AS(read_pgm((dir / "missing.pgm").string()), IoError);
    fs::remove_all(dir);
}

TEST_CASE("dataset write/load round trip preserves every sample") {
    const fs::path dir = temp_dir();
    SyntheticSpec spec;
    Dataset dataset;
    dataset.image_side = spec.image_side;
    dataset.class_names = spec.class_names();
    dataset.samples = generate_dataset(spec, DatasetCounts{6, 3, 3}, 21);
    write_dataset(dataset, dir.string());

    Dataset back = load_manifest((dir / "manifest.csv").string());
    CHECK(back.class_names == dataset.class_names);
    CHECK(back.image_side == dataset.image_side);
    REQUIRE(back.samples.size() == dataset.samples.size());
    for (size_t i = 0; i < back.samples.size(); ++i) {
        const Sample& a = dataset.samples[i];
        const Sample& b = back.samples[i];
        CHECK(a.id == b.id);
        CHECK(a.split == b.split);
        CHECK(a.labels == b.labels);
        CHECK(a.image.px == b.image.px);
        for (size_t c = 0; c < a.masks.size(); ++c) {
            const bool a_has = a.masks[c].present() && a.masks[c].any();
            const bool b_has = b.masks[c].present() && b.masks[c].any();
            CHECK(a_has == b_has);
            if (a_has) CHECK(a.masks[c].px == b.masks[c].px);
        }
    }
    fs::remove_all(dir);
}

TEST_CASE("all-negative manifest rows are valid samples") {
    const fs::path dir = temp_dir();
    fs::create_directories(dir / "images");
    Image img = Image::zeros(8);
    write_image_pgm((dir / "images" / "n0.pgm").string(), img);
    {
        std::ofstream out(dir / "manifest.csv");
        out << "id,split,image_path,label_a,label_b,mask_path_a,mask_path_b\n";
        out << "n0,test,images/n0.pgm,0,0,,\n";
    }
    Dataset ds = load_manifest((dir / "manifest.csv").string());
    CHECK(ds.samples.size() == 1);
    CHECK(ds.samples[0].labels == std::vector<uint8_t>{0, 0});
    CHECK(!ds.samples[0].masks[0].present());
    fs::remove_all(dir);
}

TEST_CASE("loader reports itemized errors and repairs nothing") {
    const fs::path dir = temp_dir();
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    Image img = Image::zeros(8);
    write_image_pgm((dir / "images" / "ok.pgm").string(), img);
    Mask m = Mask::zeros(8);
    m.at(1, 1) = 1;
    write_mask_pgm((dir / "masks" / "bad.pgm").string(), m);
    Mask wrong_size = Mask::zeros(4);
    wrong_size.at(0, 0) = 1;
    write_mask_pgm((dir / "masks" / "small.pgm").string(), wrong_size);

    {
        std::ofstream out(dir / "manifest.csv");
        out << "id,split,image_path,label_a,mask_path_a\n";
        out << "s0,test,images/missing.pgm,1,\n";              // missing image
        out << "s1,nosuchsplit,images/ok.pgm,0,\n";            // bad split
        out << "s2,test,images/ok.pgm,2,\n";                   // non-binary label
        out << "s3,test,images/ok.pgm,0,masks/bad.pgm\n";      // label 0, mask non-empty
        out << "s4,test,images/ok.pgm,1,masks/small.pgm\n";    // size mismatch
    }
    try {
        load_manifest((dir / "manifest.csv").string());
        FAIL("expected IoError");
    } catch (const IoError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("s0") != std::string::npos);
        CHECK(msg.find("s1") != std::string::npos);
        CHECK(msg.find("s2") != std::string::npos);
        CHECK(msg.find("s3") != std::string::npos);
        CHECK(msg.find("s4") != std::string::npos);
        CHECK(msg.find("5 invalid sample") != std::string::npos);
    }

    {
        std::ofstream out(dir / "bad_header.csv");
        out << "id,image_path,label_a\n";
    }
    CHECK_THROWS_AS(load_manifest((dir / "bad_header.csv").string()), IoError);
    fs::remove_all(dir);
}
