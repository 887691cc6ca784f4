#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace std::string_literals;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = -1;
    std::string output;  // stdout + stderr
};

const char* cli_path() {
    const char* p = std::getenv("VITH_CLI");
    return p ? p : "./vith";
}

fs::path work_dir() {
    static fs::path dir;
    if (dir.empty()) {
        dir = fs::temp_directory_path() / "vith_ut_cli";
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    return dir;
}

RunResult run(const std::string& args) {
    const auto log = work_dir() / "run.log";
    const std::string cmd = "\""s + cli_path() + "\" " + args + " > \"" + log.string() +
                            "\" 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult r;
#ifdef _WIN32
    r.code = status;
#else
    r.code = (status >= 0 && (status & 0x7f) == 0) ? (status >> 8) & 0xff : -1;
#endif
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    r.output = ss.str();
    return r;
}

std::string slurp_text(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST_CASE("cli: end-to-end synth -> train -> encode -> eval -> pr-curve") {
    const auto dir = work_dir();
    const auto pool = dir / "pool.vtss";
    const auto proto = dir / "protocol.json";
    {
        std::ofstream out(proto);
        out << "{\"name\":\"toy\",\"scheme\":\"per_class_disjoint\",\"train_per_class\":30,"
               "\"query_per_class\":10,\"map_cutoff\":40}";
    }

    auto made = run("make-synth --classes 4 --per-class 60 --size 12 --seed 3 --out " + q(pool));
    REQUIRE(made.code == 0);
    REQUIRE(fs::exists(pool));

    const auto ckpt = (dir / "run").string();
    auto trained = run("train --data " + q(pool) + " --protocol-file " + q(proto) +
                       " --bits 8 --epochs 2 --batch 16 --eval-every 2 --lr 1e-3 --seed 3" +
                       " --out \"" + ckpt + "\"");
    REQUIRE(trained.code == 0);
    CHECK(fs::exists(ckpt + ".vtsw"));
    CHECK(fs::exists(ckpt + ".json"));
    CHECK(fs::exists(ckpt + ".last.vtsw"));
    const auto metrics = slurp_text(ckpt + ".metrics.csv");
    CHECK(metrics.rfind("# config {", 0) == 0);
    CHECK(metrics.find("epoch,split,loss,map") != std::string::npos);
    CHECK(metrics.find("2,eval,,") != std::string::npos);

    // encode twice: byte-identical output files
    const auto db1 = dir / "db1.vtsc";
    const auto db2 = dir / "db2.vtsc";
    const std::string enc_args = "encode --checkpoint \"" + ckpt + "\" --data " + q(pool) +
                                 " --protocol-file " + q(proto) + " --seed 3 --split database";
    auto e1 = run(enc_args + " --out " + q(db1));
    REQUIRE(e1.code == 0);
    auto e2 = run(enc_args + " --out " + q(db2));
    REQUIRE(e2.code == 0);
    std::ifstream f1(db1, std::ios::binary), f2(db2, std::ios::binary);
    std::vector<char> b1((std::istreambuf_iterator<char>(f1)), {});
    std::vector<char> b2((std::istreambuf_iterator<char>(f2)), {});
    REQUIRE(!b1.empty());
    CHECK(b1 == b2);

    const auto qs = dir / "q.vtsc";
    auto eq = run("encode --checkpoint \"" + ckpt + "\" --data " + q(pool) + " --protocol-file " +
                  q(proto) + " --seed 3 --split query --out " + q(qs));
    REQUIRE(eq.code == 0);

    // eval prints the headline metric and can emit the PR curve
    const auto pr = dir / "pr.csv";
    auto ev = run("eval --query " + q(qs) + " --db " + q(db1) + " --cutoff 40 --pr " + q(pr));
    REQUIRE(ev.code == 0);
    CHECK(ev.output.find("mAP@40 = ") != std::string::npos);
    const auto pr_text = slurp_text(pr);
    CHECK(pr_text.find("recall,precision") != std::string::npos);
    CHECK(pr_text.find("# queries_used") != std::string::npos);
    std::size_t rows = 0;
    std::istringstream prs(pr_text);
    std::string line;
    while (std::getline(prs, line))
        if (!line.empty() && line[0] != '#' && line.find("recall") == std::string::npos) ++rows;
    CHECK(rows == 21);

    // standalone pr-curve writes the same grid
    const auto pr2 = dir / "pr2.csv";
    auto pc = run("pr-curve --query " + q(qs) + " --db " + q(db1) + " --out " + q(pr2));
    REQUIRE(pc.code == 0);
    CHECK(slurp_text(pr2) == pr_text);

    // inspect-weights lists tensors and a parameter total
    auto iw = run("inspect-weights --in \"" + ckpt + ".vtsw\"");
    REQUIRE(iw.code == 0);
    CHECK(iw.output.find("embed.w_pe") != std::string::npos);
    CHECK(iw.output.find("hash.w2") != std::string::npos);
    CHECK(iw.output.find("43 tensors, 220972 parameters") != std::string::npos);
}

TEST_CASE("cli: exit codes") {
    const auto dir = work_dir();
    // config errors -> 2
    CHECK(run("train --bits 0").code == 2);
    CHECK(run("train --objective sorting").code == 2);
    CHECK(run("encode --checkpoint " + q(dir / "no_such_ckpt")).code == 2);
    // data errors -> 3
    CHECK(run("eval --query " + q(dir / "nope.vtsc") + " --db " + q(dir / "nope.vtsc")).code == 3);
    CHECK(run("inspect-weights --in " + q(dir / "nope.vtsw")).code == 3);
    // unknown flag -> 2 via the CLI parser
    CHECK(run("train --no-such-flag").code == 2);
    CHECK(run("make-synth --classes 1 --out " + q(dir / "x.vtss")).code == 2);
}

TEST_CASE("cli: config file merge and precedence") {
    const auto dir = work_dir();
    const auto pool = dir / "cfgpool.vtss";
    const auto cfg = dir / "run.json";
    {
        std::ofstream out(cfg);
        // per-class below the default protocol needs, so failure to apply
        // the file would make make-synth succeed with defaults instead
        out << "{\"classes\": 3, \"per-class\": 7, \"size\": 9, \"seed\": 12}";
    }
    auto r = run("make-synth --config " + q(cfg) + " --out " + q(pool) + " --per-class 8");
    REQUIRE(r.code == 0);

    // the flag beat the file (8 items), the file beat the default (3 classes)
    auto probe = run("make-synth --classes 3 --per-class 8 --size 9 --seed 12 --out " +
                     q(dir / "cfg_ref.vtss"));
    REQUIRE(probe.code == 0);
    std::ifstream fa(pool, std::ios::binary), fb(dir / "cfg_ref.vtss", std::ios::binary);
    std::vector<char> a((std::istreambuf_iterator<char>(fa)), {});
    std::vector<char> b((std::istreambuf_iterator<char>(fb)), {});
    CHECK(a == b);

    // unknown config keys are rejected
    const auto bad = dir / "bad.json";
    {
        std::ofstream out(bad);
        out << "{\"classez\": 3}";
    }
    CHECK(run("make-synth --config " + q(bad) + " --out " + q(dir / "y.vtss")).code == 2);
    // malformed JSON too
    const auto worse = dir / "worse.json";
    {
        std::ofstream out(worse);
        out << "{oops";
    }
    CHECK(run("make-synth --config " + q(worse) + " --out " + q(dir / "z.vtss")).code == 2);
}
