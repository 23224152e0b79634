#include "doctest.h"
#include "helpers.hpp"

#include "scatgate/store.hpp"

#include "json.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using nlohmann::json;

namespace {

struct Run {
    int code = -1;
    std::string out;
};

// Runs the CLI with stdout captured; stderr is discarded.
Run cli(const std::string& args) {
    const std::string cmd = std::string(SCATGATE_CLI) + " " + args + " 2>/dev/null";
    Run r;
    FILE* p = ::popen(cmd.c_str(), "r");
    REQUIRE(p);
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
    const int status = ::pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(line);
    return out;
}

const char* kCorpus = R"(width = 64
height = 64
center_jitter = 4.0
[counts.rings]
experimental = 12
clean = 30
corrupted = 30
)";

}  // namespace

TEST_CASE("usage errors exit with 2") {
    CHECK(cli("").code == 2);
    CHECK(cli("no-such-command").code == 2);
    CHECK(cli("synth --out x").code == 2);
    CHECK(cli("warp /nonexistent.png").code == 2);
    const auto v = cli("--version");
    CHECK(v.code == 0);
    CHECK(v.out.find("0.1.0") != std::string::npos);
    CHECK(cli("synth --help").code == 0);
}

TEST_CASE("synth is deterministic per seed") {
    testing::TempDir dir("cli");
    std::ofstream(dir / "corpus.toml") << kCorpus;
    const auto cfg = (dir / "corpus.toml").string();
    REQUIRE(cli("synth --config " + cfg + " --out " + (dir / "a").string() + " --seed 4").code == 0);
    REQUIRE(cli("synth --config " + cfg + " --out " + (dir / "b").string() + " --seed 4").code == 0);
    REQUIRE(cli("synth --config " + cfg + " --out " + (dir / "c").string() + " --seed 5").code == 0);
    CHECK(slurp(dir / "a/manifest.jsonl") == slurp(dir / "b/manifest.jsonl"));
    CHECK(slurp(dir / "a/truth.jsonl") == slurp(dir / "b/truth.jsonl"));
    CHECK(slurp(dir / "a/manifest.jsonl") != slurp(dir / "c/manifest.jsonl"));
    const auto m = scatgate::read_manifest(dir / "a/manifest.jsonl");
    CHECK(m.size() == 72);
    const auto first = m.entries().front().path;
    CHECK(slurp(dir / "a" / first) == slurp(dir / "b" / first));

    std::ofstream(dir / "bad.toml") << "width = -3\n";
    CHECK(cli("synth --config " + (dir / "bad.toml").string() + " --out " + (dir / "d").string()).code == 1);
}

TEST_CASE("score, features, metrics") {
    testing::TempDir dir("cli");
    std::ofstream(dir / "corpus.toml") << kCorpus;
    REQUIRE(cli("synth --config " + (dir / "corpus.toml").string() + " --out " + (dir / "c").string()).code == 0);
    const auto images = (dir / "c/images").string();

    const auto s = cli("score " + images + " --window 8");
    REQUIRE(s.code == 0);
    const auto rows = lines(s.out);
    CHECK(rows.size() == 72);
    for (const auto& r : rows) {
        const auto j = json::parse(r);
        CHECK(j.at("composite").get<double>() >= 0.0);
        CHECK(j.at("composite").get<double>() <= 1.0);
    }
    CHECK(cli("score " + (dir / "missing.png").string()).code == 1);

    REQUIRE(cli("features " + images + " --window 8 --out " + (dir / "f.csv").string()).code == 0);
    const auto csv = lines(slurp(dir / "f.csv"));
    CHECK(csv.size() == 73);
    const auto m = cli("metrics --real " + (dir / "f.csv").string() + " --generated " + (dir / "f.csv").string() +
                       " --subset-size 20 --subsets 5");
    REQUIRE(m.code == 0);
    CHECK(json::parse(m.out).at("fid").get<double>() <= 1e-6);
}

TEST_CASE("vote combines probability files") {
    testing::TempDir dir("cli");
    std::ofstream(dir / "a.csv") << "id,p_realistic,p_fake\nx,0.9,0.1\ny,0.2,0.8\nz,0.6,0.4\n";
    std::ofstream(dir / "b.csv") << "id,p_realistic,p_fake\nz,0.2,0.8\ny,0.4,0.6\nx,0.7,0.3\n";
    const auto probs = " --probs " + (dir / "a.csv").string() + " --probs " + (dir / "b.csv").string();

    const auto soft = cli("vote" + probs);
    REQUIRE(soft.code == 0);
    const auto out = lines(soft.out);
    REQUIRE(out.size() == 4);
    CHECK(out[0] == "id,verdict,p_realistic");
    CHECK(out[1].rfind("x,realistic,0.8", 0) == 0);
    CHECK(out[2].rfind("y,fake,0.3", 0) == 0);
    CHECK(out[3].rfind("z,fake,0.4", 0) == 0);

    std::ofstream(dir / "w.json") << "[0.75, 0.25]";
    const auto weighted = lines(cli("vote" + probs + " --strategy soft-weighted --weights " + (dir / "w.json").string()).out);
    REQUIRE(weighted.size() == 4);
    CHECK(weighted[1].rfind("x,realistic,0.85", 0) == 0);
    CHECK(weighted[2].rfind("y,fake,0.25", 0) == 0);

    const auto hard = lines(cli("vote" + probs + " --strategy hard --tie-break realistic").out);
    CHECK(hard[3].rfind("z,realistic", 0) == 0);

    std::ofstream(dir / "labels.jsonl")
        << R"({"image_id":"x","verdict":"realistic","source":"human","round":0,"annotator":"t","timestamp":"1970-01-01T00:00:00.000Z"})"
        << "\n"
        << R"({"image_id":"y","verdict":"fake","source":"human","round":0,"annotator":"t","timestamp":"1970-01-01T00:00:00.000Z"})"
        << "\n";
    const auto rep = cli("vote" + probs + " --labels " + (dir / "labels.jsonl").string() + " --report " +
                         (dir / "rep.json").string());
    CHECK(rep.code == 0);
    CHECK(json::parse(slurp(dir / "rep.json")).at("rows").size() == 5);

    CHECK(cli("vote" + probs + " --strategy soft-weighted").code == 2);
    CHECK(cli("vote" + probs + " --report r.json").code == 2);
    CHECK(cli("vote" + probs + " --strategy median").code == 1);
    CHECK(cli("vote --probs " + (dir / "none.csv").string()).code == 1);
    std::ofstream(dir / "w3.json") << "[0.5, 0.25, 0.25]";
    CHECK(cli("vote" + probs + " --strategy soft-weighted --weights " + (dir / "w3.json").string()).code == 1);
}

TEST_CASE("loop commands") {
    testing::TempDir dir("cli");
    std::ofstream(dir / "corpus.toml") << kCorpus;
    const auto corpus = (dir / "c").string();
    REQUIRE(cli("synth --config " + (dir / "corpus.toml").string() + " --out " + corpus).code == 0);
    const auto common = " --root " + (dir / "state").string() + " --dataset " + corpus + " --window 8 --seed 2";

    CHECK(cli("loop-propose" + common).code == 1);
    const auto seeded = cli("loop-seed" + common + " --scale 0.1 --import-labels " + corpus + "/labels.jsonl --import-count 50");
    REQUIRE(seeded.code == 0);
    CHECK(json::parse(seeded.out).at("index") == 1);
    CHECK(cli("loop-seed" + common + " --scale 0.1").code == 1);

    const auto prop = cli("loop-propose" + common + " --batch 5");
    REQUIRE(prop.code == 0);
    CHECK(json::parse(prop.out).at("items").size() <= 5);

    CHECK(cli("loop-review" + common).code == 2);
    const auto rev = cli("loop-review" + common + " --simulate " + corpus + "/truth.jsonl");
    REQUIRE(rev.code == 0);
    CHECK(json::parse(rev.out).at("status") == "reviewing");

    CHECK(cli("loop-build" + common + " --experimental 4").code == 2);
    CHECK(cli("loop-build" + common + " --scale 1").code == 1);
    const auto built = cli("loop-build" + common + " --experimental 4 --generated-realistic 6 --fake 10");
    REQUIRE(built.code == 0);
    CHECK(json::parse(built.out).at("index") == 2);

    const auto rep = cli("report --root " + (dir / "state").string());
    REQUIRE(rep.code == 0);
    CHECK(json::parse(rep.out).at("rounds").size() == 1);
}
