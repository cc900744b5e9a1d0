#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

namespace {

const char* kCli = TSCIR_CLI_PATH;

struct RunResult {
    int status = -1;
    std::string out;  // stdout + stderr
};

RunResult run(const std::string& args) {
    std::string outfile = "cli_test_out.txt";
    std::string cmd = std::string(kCli) + " " + args + " > " + outfile + " 2>&1";
    int rc = std::system(cmd.c_str());
    RunResult r;
    r.status = rc == -1 ? -1 : WEXITSTATUS(rc);
    std::ifstream f(outfile);
    std::stringstream ss;
    ss << f.rdbuf();
    r.out = ss.str();
    std::remove(outfile.c_str());
    return r;
}

std::string file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_config(const std::string& path) {
    std::ofstream f(path);
    f << "embed_dim=16\nimage_size=8\npatch_size=4\nmax_tokens=20\n"
         "num_layers_img=1\nnum_layers_txt=2\nnum_heads=2\nlatent_dim=8\nadapter_dim=4\n"
         "epochs=1\nbatch_size=8\nseed=3\nhard_negative_k=3\n";
}

}  // namespace

TEST_CASE("gen-data is idempotent and refuses to clobber") {
    RunResult a = run("gen-data --kind pairs --n 12 --seed 5 --out cli_pairs.jsonl --force");
    CHECK(a.status == 0);
    std::string first = file_bytes("cli_pairs.jsonl");
    CHECK(!first.empty());

    // Second run without --force refuses; the file is untouched.
    RunResult b = run("gen-data --kind pairs --n 12 --seed 5 --out cli_pairs.jsonl");
    CHECK(b.status != 0);
    CHECK(b.out.find("error:") != std::string::npos);
    CHECK(file_bytes("cli_pairs.jsonl") == first);

    // With --force the output is bit-identical.
    RunResult c = run("gen-data --kind pairs --n 12 --seed 5 --out cli_pairs.jsonl --force");
    CHECK(c.status == 0);
    CHECK(file_bytes("cli_pairs.jsonl") == first);
    std::remove("cli_pairs.jsonl");
}

TEST_CASE("gen-data with n = 0 writes an empty, valid manifest") {
    RunResult a = run("gen-data --kind pairs --n 0 --seed 1 --out cli_empty.jsonl --force");
    CHECK(a.status == 0);
    CHECK(file_bytes("cli_empty.jsonl").empty());
    std::remove("cli_empty.jsonl");
}

TEST_CASE("bad arguments exit nonzero with a one-line error") {
    CHECK(run("gen-data --kind nonsense --n 4 --out cli_x.jsonl --force").status != 0);
    CHECK(run("frobnicate").status != 0);
    CHECK(run("train-stage1 --config missing.cfg --data missing.jsonl --out x.ck").status != 0);
    std::remove("cli_x.jsonl");
}

TEST_CASE("end-to-end: train both stages, inspect, eval, retrieve") {
    write_config("cli_cfg.txt");
    REQUIRE(run("gen-data --kind pairs --n 16 --seed 7 --out cli_p.jsonl --force").status == 0);
    REQUIRE(run("gen-data --kind triplets --n 24 --seed 9 --gallery 24 --out cli_t.jsonl --force")
                .status == 0);

    RunResult t1 = run("train-stage1 --config cli_cfg.txt --data cli_p.jsonl --out cli_s1.ck");
    CHECK(t1.status == 0);
    RunResult t1b = run(
        "train-stage1 --config cli_cfg.txt --data cli_p.jsonl --out cli_s1b.ck");
    CHECK(t1b.status == 0);
    CHECK(file_bytes("cli_s1.ck") == file_bytes("cli_s1b.ck"));  // reproducible

    RunResult ins = run("inspect --checkpoint cli_s1.ck");
    CHECK(ins.status == 0);
    CHECK(ins.out.find("stage: 1") != std::string::npos);
    CHECK(ins.out.find("adapter") != std::string::npos);
    CHECK(ins.out.find("embed_dim=16") != std::string::npos);

    RunResult t2 = run(
        "train-stage2 --config cli_cfg.txt --data cli_t.jsonl --out cli_s2.ck "
        "--stage1-checkpoint cli_s1.ck");
    CHECK(t2.status == 0);
    RunResult ins2 = run("inspect --checkpoint cli_s2.ck");
    CHECK(ins2.out.find("stage: 2") != std::string::npos);

    // Stage 2 resume requires a stage-2 checkpoint.
    CHECK(run("train-stage2 --config cli_cfg.txt --data cli_t.jsonl --out cli_s2c.ck "
              "--stage1-checkpoint cli_s1.ck --resume cli_s1.ck")
              .status != 0);

    RunResult ev = run("eval --checkpoint cli_s2.ck --split cli_t.jsonl --k 1,5,10");
    CHECK(ev.status == 0);
    CHECK(ev.out.find("R@1") != std::string::npos);
    CHECK(ev.out.find("mAP@10") != std::string::npos);
    // Eval output is reproducible.
    RunResult ev2 = run("eval --checkpoint cli_s2.ck --split cli_t.jsonl --k 1,5,10");
    CHECK(ev2.out == ev.out);

    RunResult rt = run(
        "retrieve --checkpoint cli_s2.ck --data cli_t.jsonl --reference r000000 "
        "--modification \"change color to red\" --k 3");
    CHECK(rt.status == 0);
    CHECK(rt.out.find("rank") != std::string::npos);
    RunResult rt2 = run(
        "retrieve --checkpoint cli_s2.ck --data cli_t.jsonl --reference r000000 "
        "--modification \"change color to red\" --k 3");
    CHECK(rt2.out == rt.out);

    RunResult bad_ref = run(
        "retrieve --checkpoint cli_s2.ck --data cli_t.jsonl --reference nope "
        "--modification \"change color to red\" --k 3");
    CHECK(bad_ref.status != 0);
    CHECK(bad_ref.out.find("argument error") != std::string::npos);

    // Ablation flags are accepted and change behaviour is at least plumbed.
    RunResult ab = run(
        "eval --checkpoint cli_s1.ck --split cli_t.jsonl --k 1 --ablate vsi=off");
    CHECK(ab.status == 0);

    for (const char* f : {"cli_cfg.txt", "cli_p.jsonl", "cli_t.jsonl", "cli_s1.ck",
                          "cli_s1b.ck", "cli_s2.ck", "cli_s1.ck.log.jsonl",
                          "cli_s1b.ck.log.jsonl", "cli_s2.ck.log.jsonl"})
        std::remove(f);
}

TEST_CASE("pretrain produces a stage-1 checkpoint that stage-1 training can resume") {
    write_config("cli_cfg3.txt");
    REQUIRE(run("gen-data --kind pairs --n 16 --seed 11 --partial --out cli_pp.jsonl --force")
                .status == 0);
    RunResult pre = run("pretrain --config cli_cfg3.txt --data cli_pp.jsonl --out cli_bb.ck");
    CHECK(pre.status == 0);
    RunResult ins = run("inspect --checkpoint cli_bb.ck");
    CHECK(ins.status == 0);
    CHECK(ins.out.find("stage: 1") != std::string::npos);

    // Reproducible bytes.
    RunResult pre2 = run("pretrain --config cli_cfg3.txt --data cli_pp.jsonl --out cli_bb2.ck");
    CHECK(pre2.status == 0);
    CHECK(file_bytes("cli_bb.ck") == file_bytes("cli_bb2.ck"));

    // The pretrained backbone is a valid stage-1 starting point.
    REQUIRE(run("gen-data --kind pairs --n 16 --seed 7 --out cli_pf.jsonl --force").status == 0);
    RunResult t1 = run(
        "train-stage1 --config cli_cfg3.txt --data cli_pf.jsonl --out cli_bs1.ck "
        "--resume cli_bb.ck");
    CHECK(t1.status == 0);

    for (const char* p : {"cli_cfg3.txt", "cli_pp.jsonl", "cli_pf.jsonl", "cli_bb.ck",
                          "cli_bb2.ck", "cli_bs1.ck", "cli_bb.ck.log.jsonl",
                          "cli_bb2.ck.log.jsonl", "cli_bs1.ck.log.jsonl"})
        std::remove(p);
}

TEST_CASE("corrupt checkpoint reports an integrity error with an offset") {
    write_config("cli_cfg2.txt");
    REQUIRE(run("gen-data --kind pairs --n 8 --seed 2 --out cli_p2.jsonl --force").status == 0);
    REQUIRE(run("train-stage1 --config cli_cfg2.txt --data cli_p2.jsonl --out cli_c.ck")
                .status == 0);
    std::string bytes = file_bytes("cli_c.ck");
    bytes[bytes.size() / 3] ^= 0x40;
    std::ofstream f("cli_c.ck", std::ios::binary);
    f << bytes;
    f.close();
    RunResult r = run("inspect --checkpoint cli_c.ck");
    CHECK(r.status != 0);
    CHECK(r.out.find("integrity error") != std::string::npos);
    for (const char* p : {"cli_cfg2.txt", "cli_p2.jsonl", "cli_c.ck", "cli_c.ck.log.jsonl"})
        std::remove(p);
}
