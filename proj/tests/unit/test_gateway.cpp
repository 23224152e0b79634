#include "doctest.h"
#include "helpers.hpp"

#include "scatgate/gateway.hpp"
#include "scatgate/synth.hpp"

#include "httplib.h"

#include <chrono>
#include <fstream>
#include <thread>

using namespace scatgate;
using namespace scatgate::gateway;
using nlohmann::json;

namespace {

// Two on-disk datasets: "demo" (64x64 rings, drives the loop) and "wide" (512x512 peaks).
struct Fixture {
    testing::TempDir dir{"gw"};
    synth::Corpus demo, wide;

    Fixture() {
        synth::CorpusConfig c;
        c.size = {64, 64};
        c.center_jitter = 4;
        c.counts[PatternClass::Rings] = {20, 60, 60};
        demo = synth::generate_corpus(c, dir / "datasets/demo", 11);
        synth::CorpusConfig w;
        w.size = {512, 512};
        w.counts[PatternClass::Peaks] = {1, 1, 0};
        wide = synth::generate_corpus(w, dir / "datasets/wide", 12);
    }

    ServiceConfig config() const {
        ServiceConfig c;
        c.port = 0;
        c.data_root = dir.path();
        c.loop_dataset = "demo";
        c.search_window = 8;
        c.cors_allowlist = {"http://ui.local"};
        return c;
    }

    std::vector<std::string> ids(Origin o, std::optional<Verdict> v = std::nullopt) const {
        std::vector<std::string> out;
        for (const auto& t : demo.truth)
            if (t.origin == o && (!v || t.verdict == *v)) out.push_back(t.id);
        return out;
    }
};

json parse(const httplib::Result& r) {
    REQUIRE(r);
    return json::parse(r->body);
}

std::string body(const json& j) { return j.dump(); }

json wait_job(httplib::Client& cli, const std::string& id) {
    for (int i = 0; i < 1200; ++i) {
        const auto j = parse(cli.Get("/api/jobs/" + id));
        const auto s = j.at("status").get<std::string>();
        if (s == "done" || s == "failed") return j;
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    FAIL("job " << id << " did not finish");
    return {};
}

std::pair<int, int> png_size(const std::string& bytes) {
    REQUIRE(bytes.size() > 24);
    auto be32 = [&](std::size_t o) {
        return (static_cast<unsigned char>(bytes[o]) << 24) | (static_cast<unsigned char>(bytes[o + 1]) << 16) |
               (static_cast<unsigned char>(bytes[o + 2]) << 8) | static_cast<unsigned char>(bytes[o + 3]);
    };
    return {be32(16), be32(20)};
}

}  // namespace

TEST_CASE("service config") {
    testing::TempDir dir("gwcfg");
    const auto c = parse_service_config(R"(
[server]
host = "0.0.0.0"
port = 9000
data_root = "data"
thumb_side = 96
auth_token = "s3cret"
cors_allowlist = ["http://a", "*"]
datasets = ["extra/set"]

[loop]
dataset = "demo"
pattern = "rings"
search_window = 12.5
)",
                                        dir.path());
    CHECK(c.host == "0.0.0.0");
    CHECK(c.port == 9000);
    CHECK(c.data_root == dir / "data");
    CHECK(c.thumb_side == 96);
    CHECK(*c.auth_token == "s3cret");
    CHECK(c.cors_allowlist.size() == 2);
    CHECK(c.dataset_dirs.front() == dir / "extra/set");
    CHECK(*c.loop_dataset == "demo");
    CHECK(*c.loop_pattern == PatternClass::Rings);
    CHECK(c.search_window == 12.5);
    CHECK_NOTHROW(c.validate());

    CHECK_THROWS_AS(parse_service_config("[server]\nport = \"x\"\n"), Error);
    ServiceConfig bad = c;
    bad.port = 70000;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = c;
    bad.thumb_side = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
    std::ofstream(dir / "file") << "x";
    bad = c;
    bad.data_root = dir / "file";
    try {
        bad.validate();
        FAIL("expected an io error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Io);
    }
    CHECK_THROWS_AS(load_service_config(dir / "missing.toml"), Error);
}

TEST_CASE("error kinds map to HTTP statuses") {
    CHECK(http_status(ErrorKind::InvalidArgument) == 400);
    CHECK(http_status(ErrorKind::NotFound) == 404);
    CHECK(http_status(ErrorKind::Conflict) == 409);
    CHECK(http_status(ErrorKind::Insufficient) == 409);
    CHECK(http_status(ErrorKind::Numerical) == 422);
    CHECK(http_status(ErrorKind::Io) == 500);
}

TEST_CASE("job runner and idempotency cache") {
    JobRunner jobs;
    const auto a = jobs.submit("ok", [] { return json{{"v", 1}}; });
    const auto b = jobs.submit("bad", []() -> json { fail(ErrorKind::Conflict, "nope"); });
    CHECK(jobs.wait(a).status == JobStatus::Done);
    CHECK(jobs.wait(a).result.at("v") == 1);
    const auto jb = jobs.wait(b);
    CHECK(jb.status == JobStatus::Failed);
    CHECK(jb.error_kind == "conflict");
    CHECK(to_json(jb).at("error").at("kind") == "conflict");
    CHECK_FALSE(jobs.get("job-99").has_value());
    jobs.shutdown();
    CHECK_THROWS_AS(jobs.submit("late", [] { return json{}; }), Error);

    IdempotencyCache cache;
    std::atomic<int> calls{0};
    std::vector<std::thread> threads;
    std::vector<IdempotencyCache::Response> out(8);
    for (int i = 0; i < 8; ++i)
        threads.emplace_back([&, i] {
            out[i] = cache.run("k", [&] {
                ++calls;
                std::this_thread::sleep_for(std::chrono::milliseconds(20));
                return IdempotencyCache::Response{201, "first"};
            });
        });
    for (auto& t : threads) t.join();
    CHECK(calls == 1);
    for (const auto& r : out) CHECK(r.body == "first");
    // server faults are retried
    cache.run("f", [] { return IdempotencyCache::Response{500, "x"}; });
    CHECK(cache.run("f", [] { return IdempotencyCache::Response{200, "y"}; }).body == "y");
}

TEST_CASE("thumbnail rendering") {
    const auto f = synth::generate_rings(synth::random_ring_spec({512, 512}, 1, 5, 0.0, false), {512, 512}, 1);
    const auto png = render_thumbnail(f, 128);
    const std::string s(png.begin(), png.end());
    CHECK(png_size(s) == std::pair{128, 128});
    CHECK_THROWS_AS(render_thumbnail(f, 0), Error);
}

TEST_CASE("HTTP service end to end") {
    Fixture fx;
    Service svc(fx.config());
    svc.start();
    httplib::Client cli("127.0.0.1", svc.port());
    cli.set_read_timeout(std::chrono::seconds(300));
    auto post = [&](const std::string& path, const json& j, httplib::Headers h = {}) {
        return cli.Post(path, h, body(j), "application/json");
    };

    SUBCASE("read-only routes") {
        const auto h = cli.Get("/api/health");
        REQUIRE(h);
        CHECK(h->status == 200);
        CHECK(parse(h).at("status") == "ok");

        const auto ds = parse(cli.Get("/api/datasets")).at("datasets");
        REQUIRE(ds.size() == 2);
        CHECK(ds[0].at("name") == "demo");
        CHECK(ds[0].at("size") == 140);
        CHECK(ds[0].at("loop") == true);

        const auto page = parse(cli.Get("/api/images?dataset=demo&page=2&page_size=50&filter=generated"));
        CHECK(page.at("total") == 120);
        CHECK(page.at("items").size() == 50);
        CHECK(parse(cli.Get("/api/images?filter=peaks")).at("total") == 2);
        CHECK(cli.Get("/api/images?filter=bogus")->status == 400);
        CHECK(cli.Get("/api/images?page=abc")->status == 400);
        CHECK(cli.Get("/api/images?dataset=nope")->status == 404);

        const auto wide_id = fx.wide.truth.front().id;
        const auto t = cli.Get("/api/images/" + wide_id + "/thumb");
        REQUIRE(t);
        CHECK(t->status == 200);
        CHECK(t->get_header_value("Content-Type") == "image/png");
        CHECK(png_size(t->body) == std::pair{128, 128});
        CHECK(svc.workspace().thumbnail_cache_size() == 1);
        const auto again = cli.Get("/api/images/" + wide_id + "/thumb");
        CHECK(again->body == t->body);
        CHECK(svc.workspace().thumbnail_cache_size() == 1);
        CHECK(png_size(cli.Get("/api/images/" + wide_id + "/thumb?side=32")->body) == std::pair{32, 32});
        CHECK(cli.Get("/api/images/" + wide_id + "/thumb?side=0")->status == 400);
        CHECK(cli.Get("/api/images/nope/thumb")->status == 404);

        const auto raw = cli.Get("/api/images/" + wide_id + "/raw");
        CHECK(raw->status == 200);
        CHECK(raw->get_header_value("Content-Disposition").find(wide_id) != std::string::npos);

        const auto realism = parse(cli.Get("/api/images/" + fx.demo.truth.front().id + "/realism"));
        CHECK(realism.contains("composite"));

        const auto missing = cli.Get("/api/nothing-here");
        CHECK(missing->status == 404);
        CHECK(parse(missing).at("kind") == "not_found");
        CHECK(cli.Get("/api/rounds/7")->status == 404);
        CHECK(cli.Get("/api/rounds/x")->status == 400);
        CHECK(cli.Get("/api/jobs/job-404")->status == 404);
        CHECK(cli.Get("/api/projection?model=tsne")->status == 404);
        const auto proj = parse(cli.Get("/api/projection"));
        CHECK(proj.at("points").size() == 140);
        CHECK(proj.at("explained_ratio").size() == 2);
    }

    SUBCASE("labels, idempotency and malformed requests") {
        const auto gen = fx.ids(Origin::Generated);
        const auto r404 = post("/api/labels", {{"image_id", "rings_missing"}, {"verdict", "fake"}});
        CHECK(r404->status == 404);
        CHECK(post("/api/labels", {{"image_id", gen[0]}, {"verdict", "maybe"}})->status == 400);
        CHECK(cli.Post("/api/labels", "{not json", "application/json")->status == 400);
        CHECK(post("/api/labels", {{"verdict", "fake"}})->status == 400);

        const httplib::Headers key{{"Idempotency-Key", "abc"}};
        const auto first = post("/api/labels", {{"image_id", gen[0]}, {"verdict", "fake"}}, key);
        const auto second = post("/api/labels", {{"image_id", gen[0]}, {"verdict", "fake"}}, key);
        CHECK(first->status == 201);
        CHECK(second->status == 201);
        CHECK(first->body == second->body);
        CHECK(svc.workspace().controller().label_history(gen[0]).size() == 1);
        // without a key the repeat collides with the stored round-0 label
        CHECK(post("/api/labels", {{"image_id", gen[0]}, {"verdict", "fake"}})->status == 409);

        // concurrent writers all land
        std::vector<std::thread> threads;
        std::atomic<int> created{0};
        for (int t = 0; t < 8; ++t)
            threads.emplace_back([&, t] {
                httplib::Client c("127.0.0.1", svc.port());
                for (std::size_t i = 1 + t; i < 41; i += 8) {
                    const auto r = c.Post("/api/labels", body({{"image_id", gen[i]}, {"verdict", "realistic"}}),
                                          "application/json");
                    if (r && r->status == 201) ++created;
                }
            });
        for (auto& t : threads) t.join();
        CHECK(created == 40);
        LabelStore reread(fx.dir / "labels.jsonl");
        CHECK(reread.size() == 41);
        for (std::size_t i = 0; i < 41; ++i) CHECK(reread.effective(gen[i]).has_value());
    }

    SUBCASE("round lifecycle over HTTP") {
        // initial human labels from ground truth for half of each class
        for (Verdict v : {Verdict::Realistic, Verdict::Fake}) {
            const auto pick = fx.ids(Origin::Generated, v);
            for (std::size_t i = 0; i < 30; ++i)
                REQUIRE(post("/api/labels", {{"image_id", pick[i]}, {"verdict", to_string(v)}})->status == 201);
        }
        CHECK(parse(cli.Get("/api/images?filter=fake")).at("total") == 30);
        CHECK(parse(cli.Get("/api/images?dataset=demo&filter=unlabeled,generated")).at("total") == 60);

        CHECK(post("/api/rounds/seed", {{"scale", 50.0}})->status == 409);
        const auto seeded = post("/api/rounds/seed", {{"scale", 0.1}, {"seed", 3}});
        REQUIRE(seeded->status == 201);
        CHECK(parse(seeded).at("composition").at("training").at("realistic") == 10);
        CHECK(post("/api/rounds/seed", {{"scale", 0.1}})->status == 409);
        CHECK(post("/api/labels", {{"image_id", fx.ids(Origin::Generated)[0]}, {"verdict", "fake"}})->status == 409);

        const auto early = parse(post("/api/rounds/1/propose", {{"batch", 5}}));
        CHECK(wait_job(cli, early.at("job")).at("status") == "failed");

        const auto train = post("/api/jobs/train", {{"seed", 1}});
        REQUIRE(train->status == 202);
        const auto tj = wait_job(cli, parse(train).at("job"));
        REQUIRE(tj.at("status") == "done");
        CHECK(tj.at("result").at("report").at("rows").size() == 6);

        const auto pj = wait_job(cli, parse(post("/api/rounds/1/propose", {{"batch", 10}})).at("job"));
        REQUIRE(pj.at("status") == "done");
        const auto queue = parse(cli.Get("/api/rounds/1/queue"));
        REQUIRE(queue.at("items").size() == 10);
        const auto qid = queue["items"][0].at("id").get<std::string>();
        const auto lab = post("/api/labels", {{"image_id", qid}, {"verdict", "fake"}, {"annotator", "ann"}});
        CHECK(lab->status == 201);
        CHECK(parse(lab).at("label").at("source") == "human");
        CHECK(post("/api/labels", {{"image_id", qid}, {"verdict", "fake"}})->status == 409);
        CHECK(post("/api/labels", {{"image_id", fx.ids(Origin::Experimental)[0]}, {"verdict", "fake"}})->status == 409);
        CHECK(parse(cli.Get("/api/rounds/1/queue")).at("reviewed") == 1);

        CHECK(post("/api/rounds/2/build-next", json::object())->status == 409);
        CHECK(post("/api/rounds/1/build-next", {{"scale", 1.0}})->status == 409);
        const auto next =
            post("/api/rounds/1/build-next", {{"targets", {{"experimental", 4}, {"generated_realistic", 6}, {"fake", 10}}}});
        REQUIRE(next->status == 201);
        CHECK(parse(next).at("index") == 2);
        const auto rounds = parse(cli.Get("/api/rounds")).at("rounds");
        REQUIRE(rounds.size() == 2);
        CHECK(rounds[0].at("status") == "closed");
        CHECK(parse(cli.Get("/api/reports/rounds")).at("rounds").size() == 1);
        svc.stop();

        // a fresh service replays the persisted state
        Service again(fx.config());
        CHECK(again.workspace().controller().rounds().size() == 2);
        CHECK(again.workspace().controller().effective_label(qid)->source == LabelSource::Human);
    }
}

TEST_CASE("auth and CORS") {
    Fixture fx;
    auto cfg = fx.config();
    cfg.auth_token = "tok";
    Service svc(cfg);
    svc.start();
    httplib::Client cli("127.0.0.1", svc.port());

    CHECK(cli.Get("/api/health")->status == 200);
    const auto denied = cli.Get("/api/datasets");
    CHECK(denied->status == 401);
    CHECK(parse(denied).at("kind") == "unauthorized");
    CHECK(cli.Get("/api/datasets", {{"Authorization", "Bearer wrong"}})->status == 401);
    CHECK(cli.Get("/api/datasets", {{"Authorization", "Bearer tok"}})->status == 200);
    CHECK(cli.Get("/api/datasets", {{"X-Auth-Token", "tok"}})->status == 200);
    CHECK(cli.Post("/api/labels", "{}", "application/json")->status == 401);

    const auto allowed = cli.Get("/api/health", {{"Origin", "http://ui.local"}});
    CHECK(allowed->get_header_value("Access-Control-Allow-Origin") == "http://ui.local");
    const auto other = cli.Get("/api/health", {{"Origin", "http://evil"}});
    CHECK_FALSE(other->has_header("Access-Control-Allow-Origin"));
    const auto pre = cli.Options("/api/labels", {{"Origin", "http://ui.local"}});
    REQUIRE(pre);
    CHECK(pre->status == 204);
    CHECK(pre->get_header_value("Access-Control-Allow-Methods").find("POST") != std::string::npos);

    auto busy = cfg;
    busy.port = svc.port();
    Service second(busy);
    CHECK_THROWS_AS(second.bind(), Error);
}
