// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <atomic>

#include <json.hpp>

#include "amk/error.hpp"
#include "amk/feature_pipeline.hpp"
#include "amk/fs_util.hpp"
#include "amk/png_codec.hpp"
#include "amk/sar_reference.hpp"
#include "amk/toy_backend.hpp"
#include "http_stub.hpp"
#include "support.hpp"

using namespace amk;
using namespace amk::test;

namespace {

struct Fixture {
    TempDir tmp;
    std::shared_ptr<GenerativeBackend> backend = build_toy_backend(small_toy());
    fs::path input = tmp / "face.png";
    Fixture() { atomic_write_file(input, toy_png(small_toy(), 3)); }

    ClusterBuildOptions synthetic(std::uint64_t seed = 0) const {
        ClusterBuildOptions o;
        o.source = ClusterSource::synthetic;
        o.size = 3;
        o.cache_root = tmp / "cache";
        o.seed = seed;
        o.codec = backend.get();
        return o;
    }
};

std::vector<std::string> contents(const AgeCluster& c) {
    std::vector<std::string> out;
    for (const auto& p : c.images) out.push_back(read_file(p));
    return out;
}

// /generate stub: echoes the input with the age stamped into the first pixel.
// The first `fail_first` requests answer 503.
struct ImageService {
    StubServer stub;
    std::atomic<int> hits{0};
    int fail_first = 0;
    bool always_fail = false;

    ImageService() {
        stub.server.Post("/generate", [this](const httplib::Request& req, httplib::Response& res) {
            const int n = hits++;
            if (always_fail || n < fail_first) {
                res.status = 503;
                return;
            }
            const auto body = nlohmann::json::parse(req.body);
            GrayImage16 img = decode_png(base64_decode(body.at("image_b64").get<std::string>()));
            img.pixels[0] = static_cast<std::uint16_t>(body.at("age").get<int>() * 100);
            img.pixels[1] = static_cast<std::uint16_t>(body.at("seed").get<std::uint64_t>() & 0xffff);
            res.set_content(nlohmann::json{{"image_b64", base64_encode(encode_png(img))}}.dump(),
                            "application/json");
        });
        stub.start();
    }
};

}  // namespace

TEST_CASE("synthetic clusters are deterministic, seeded and cached") {
    Fixture f;
    const auto a = build_clusters(f.input, {30, 70}, f.synthetic(1));
    REQUIRE(a.size() == 2);
    CHECK(a[0].age == 30);
    CHECK(a[1].age == 70);
    CHECK(a[0].images.size() == 3);
    CHECK(a[0].source == ClusterSource::synthetic);
    for (const auto& p : a[0].images) CHECK(p.parent_path().filename() == "30");

    const auto first = contents(a[0]);
    CHECK(first[0] != first[1]);
    CHECK(contents(a[1])[0] != first[0]);

    // Second build reuses the cached files and leaves them untouched.
    const auto stamp = fs::last_write_time(a[0].images[0]);
    const auto b = build_clusters(f.input, {30, 70}, f.synthetic(1));
    CHECK(b[0].images == a[0].images);
    CHECK(fs::last_write_time(b[0].images[0]) == stamp);

    // Same seed from an empty cache gives identical bytes; another seed does not.
    TempDir other;
    auto o = f.synthetic(1);
    o.cache_root = other / "cache";
    CHECK(contents(build_clusters(f.input, {30}, o)[0]) == first);
    const auto c = build_clusters(f.input, {30}, f.synthetic(2));
    CHECK(c[0].images[0].parent_path() != a[0].images[0].parent_path());
    CHECK(contents(c[0]) != first);
}

TEST_CASE("synthetic cluster members decode at the backend resolution") {
    Fixture f;
    const auto cl = build_clusters(f.input, {50}, f.synthetic());
    for (const auto& p : cl[0].images) CHECK(f.backend->encode_image(p).shape == f.backend->latent_shape());
}

TEST_CASE("external image service is called once per member and cached") {
    Fixture f;
    ImageService svc;
    HttpImageGenerationClient client(svc.stub.url());
    ClusterBuildOptions o;
    o.source = ClusterSource::external_service;
    o.size = 2;
    o.cache_root = f.tmp / "cache";
    o.client = &client;

    const auto cl = build_clusters(f.input, {30, 70}, o);
    CHECK(svc.hits == 4);
    CHECK(client.requests_sent() == 4);
    CHECK(decode_png(read_file(cl[0].images[0])).pixels[0] == 3000);
    CHECK(decode_png(read_file(cl[1].images[0])).pixels[0] == 7000);
    // Members get distinct seeds.
    CHECK(decode_png(read_file(cl[0].images[0])).pixels[1] != decode_png(read_file(cl[0].images[1])).pixels[1]);

    build_clusters(f.input, {30, 70}, o);
    CHECK(svc.hits == 4);
}

TEST_CASE("external image service failures are retried") {
    Fixture f;
    ImageService svc;
    svc.fail_first = 2;
    HttpImageGenerationClient client(svc.stub.url());
    ClusterBuildOptions o;
    o.source = ClusterSource::external_service;
    o.size = 1;
    o.cache_root = f.tmp / "cache";
    o.client = &client;
    o.retries = 2;
    const auto cl = build_clusters(f.input, {40}, o);
    CHECK(svc.hits == 3);
    CHECK(fs::exists(cl[0].images[0]));
}

TEST_CASE("exhausted retries name every missing member") {
    Fixture f;
    ImageService svc;
    svc.always_fail = true;
    HttpImageGenerationClient client(svc.stub.url());
    ClusterBuildOptions o;
    o.source = ClusterSource::external_service;
    o.size = 2;
    o.cache_root = f.tmp / "cache";
    o.client = &client;
    o.retries = 1;
    try {
        build_clusters(f.input, {30, 70}, o);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("4 cluster member") != std::string::npos);
        CHECK(msg.find("age 30 #0") != std::string::npos);
        CHECK(msg.find("age 70 #1") != std::string::npos);
        CHECK(msg.find("503") != std::string::npos);
    }
    CHECK(svc.hits == 8);
}

TEST_CASE("unreachable image service is an IoError") {
    Fixture f;
    int port = 0;
    {
        StubServer s;
        s.start();
        port = s.port();
    }
    HttpImageGenerationClient client("http://127.0.0.1:" + std::to_string(port), "/generate", 2000);
    ClusterBuildOptions o;
    o.source = ClusterSource::external_service;
    o.size = 1;
    o.cache_root = f.tmp / "cache";
    o.client = &client;
    o.retries = 0;
    CHECK_THROWS_AS(build_clusters(f.input, {30}, o), IoError);
}

TEST_CASE("user-supplied clusters are read from age directories") {
    Fixture f;
    const auto dir = f.tmp / "user";
    for (int age : {30, 70})
        for (int i = 0; i < 2; ++i) {
            fs::create_directories(dir / std::to_string(age));
            atomic_write_file(dir / std::to_string(age) / (std::to_string(i) + ".png"),
                              toy_png(small_toy(), 100 + age + i));
        }
    atomic_write_file(dir / "30" / "notes.txt", "ignored");

    ClusterBuildOptions o;
    o.source = ClusterSource::user_supplied;
    o.user_dir = dir;
    const auto cl = build_clusters(f.input, {30, 70}, o);
    REQUIRE(cl.size() == 2);
    CHECK(cl[0].images.size() == 2);
    CHECK(cl[0].images[0].filename() == "0.png");
    CHECK(cl[1].source == ClusterSource::user_supplied);

    CHECK_THROWS_AS(build_clusters(f.input, {50}, o), IoError);
    fs::create_directories(dir / "60");
    CHECK_THROWS_AS(build_clusters(f.input, {60}, o), IoError);

    GrayImage16 small;
    small.width = small.height = 4;
    small.pixels.assign(16, 1000);
    atomic_write_file(dir / "70" / "2.png", encode_png(small));
    CHECK_THROWS_AS(build_clusters(f.input, {70}, o), ValidationError);
}

TEST_CASE("direction is the old-minus-young mean at every site") {
    Fixture f;
    const auto sched = StepSchedule::uniform(4);
    const auto cl = build_clusters(f.input, {30, 70}, f.synthetic());
    const auto young = extract_cluster_features(cl[0], *f.backend, sched);
    const auto old = extract_cluster_features(cl[1], *f.backend, sched);
    CHECK(young.members.size() == 3);
    // Stage-0 sites only: one per interval and layer.
    CHECK(young.mean.size() == 4 * 2);

    const AgingDirection d = make_direction(old, young);
    CHECK(d.age_low == 30.0f);
    CHECK(d.age_high == 70.0f);
    CHECK(d.deltas.size() == young.mean.size());
    for (const auto& [site, kv] : d.deltas) {
        std::vector<FeatureBlock> ok, yk, ov, yv;
        for (const auto& m : old.members) {
            ok.push_back(m.at(site).k);
            ov.push_back(m.at(site).v);
        }
        for (const auto& m : young.members) {
            yk.push_back(m.at(site).k);
            yv.push_back(m.at(site).v);
        }
        CHECK(max_abs_diff(kv.k.values(), oracle::direction(ok, yk)) < 1e-5);
        CHECK(max_abs_diff(kv.v.values(), oracle::direction(ov, yv)) < 1e-5);
    }

    const auto strided = extract_cluster_features(cl[0], *f.backend, sched, 2);
    CHECK(strided.mean.size() == 2 * 2);
    CHECK_THROWS_AS(extract_cluster_features(AgeCluster{30, {}, ClusterSource::synthetic}, *f.backend, sched),
                    ContractError);
}

TEST_CASE("directions round-trip through disk") {
    Fixture f;
    const auto sched = StepSchedule::uniform(3);
    const auto cl = build_clusters(f.input, {25, 75}, f.synthetic());
    const AgingDirection d = make_direction(extract_cluster_features(cl[1], *f.backend, sched),
                                            extract_cluster_features(cl[0], *f.backend, sched));
    save_direction(f.tmp / "dir", d, sched.id(), f.backend->id());
    const AgingDirection back = load_direction(f.tmp / "dir");
    CHECK(back.age_low == 25.0f);
    CHECK(back.age_high == 75.0f);
    CHECK(back.deltas == d.deltas);

    save_site_features(f.tmp / "plain", d.deltas, FeatureDirInfo{sched.id(), f.backend->id(), ""});
    CHECK_THROWS_AS(load_direction(f.tmp / "plain"), IoError);
}

TEST_CASE("build_aging_direction caches its result") {
    Fixture f;
    const auto sched = StepSchedule::uniform(3);
    const auto a = build_aging_direction(f.input, *f.backend, sched, f.synthetic(), 30, 70);
    // Removing the member images proves the second call never looks at them.
    std::vector<fs::path> member_dirs;
    for (const auto& e : fs::recursive_directory_iterator(f.tmp / "cache"))
        if (e.is_directory() && (e.path().filename() == "30" || e.path().filename() == "70"))
            member_dirs.push_back(e.path());
    std::size_t removed = 0;
    for (const auto& d : member_dirs) removed += fs::remove_all(d);
    CHECK(removed > 0);
    const auto b = build_aging_direction(f.input, *f.backend, sched, f.synthetic(), 30, 70);
    CHECK(b->deltas == a->deltas);

    CHECK_THROWS_AS(build_aging_direction(f.input, *f.backend, sched, f.synthetic(), 70, 30), ContractError);
    // Other bounds are a separate cache entry.
    const auto c = build_aging_direction(f.input, *f.backend, sched, f.synthetic(), 20, 80);
    CHECK(c->age_low == 20.0f);
    CHECK(c->deltas != a->deltas);
}

TEST_CASE("user-supplied direction cache tracks the directory contents") {
    Fixture f;
    const auto sched = StepSchedule::uniform(3);
    const auto dir = f.tmp / "user";
    for (int age : {30, 70}) {
        fs::create_directories(dir / std::to_string(age));
        atomic_write_file(dir / std::to_string(age) / "0.png", toy_png(small_toy(), 200 + age));
    }
    ClusterBuildOptions o;
    o.source = ClusterSource::user_supplied;
    o.user_dir = dir;
    o.cache_root = f.tmp / "cache";
    const auto a = build_aging_direction(f.input, *f.backend, sched, o);
    atomic_write_file(dir / "70" / "0.png", toy_png(small_toy(), 999));
    const auto b = build_aging_direction(f.input, *f.backend, sched, o);
    CHECK(b->deltas != a->deltas);
}
