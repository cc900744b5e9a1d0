#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tscir/config.hpp"
#include "tscir/errors.hpp"
#include "tscir/model.hpp"
#include "tscir/retrieval.hpp"
#include "tscir/toydata.hpp"
#include "tscir/train.hpp"

namespace fs = std::filesystem;
using namespace tscir;

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ArgumentError("cannot open for writing: " + path);
    f << text;
}

void refuse_existing(const std::string& path, bool force) {
    std::error_code ec;
    if (!force && fs::exists(path, ec) && fs::file_size(path, ec) > 0)
        throw ArgumentError("refusing to overwrite non-empty file " + path +
                            " (pass --force to allow)");
}

Toggles parse_ablate(const std::string& spec, Toggles base) {
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        auto eq = item.find('=');
        if (eq == std::string::npos)
            throw ArgumentError("bad --ablate entry (want key=on|off): " + item);
        std::string key = item.substr(0, eq), val = item.substr(eq + 1);
        bool on;
        if (val == "on")
            on = true;
        else if (val == "off")
            on = false;
        else
            throw ArgumentError("bad --ablate value (want on|off): " + item);
        if (key == "vsi")
            base.vsi_enabled = on;
        else if (key == "sta")
            base.sta_enabled = on;
        else if (key == "adapters")
            base.adapters_enabled = on;
        else if (key == "hard_negatives")
            base.hard_negatives_enabled = on;
        else
            throw ArgumentError("unknown --ablate key: " + key);
    }
    return base;
}

std::vector<int> parse_k_list(const std::string& spec) {
    std::vector<int> out;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stoi(item));
        if (out.back() < 1) throw ArgumentError("k values must be >= 1");
    }
    if (out.empty()) throw ArgumentError("--k list is empty");
    return out;
}

int cmd_gen_data(const std::string& kind, int n, uint64_t seed, const std::string& out,
                 int gallery, int pool, double noise, bool partial, bool force) {
    refuse_existing(out, force);
    if (kind == "pairs") {
        toy::write_pairs(out, toy::generate_pairs(n, seed, partial));
    } else if (kind == "triplets" || kind == "multi-target") {
        toy::TripletGenOptions opts;
        opts.gallery_size = gallery;
        opts.multi_target = (kind == "multi-target");
        opts.multi_target_pool = pool;
        opts.noise_fraction = noise;
        toy::write_manifest(out, toy::generate_triplets(n, seed, opts));
    } else {
        throw ArgumentError("unknown --kind: " + kind);
    }
    std::cout << "wrote " << out << "\n";
    return 0;
}

int cmd_pretrain(const std::string& config_path, const std::string& data_path,
                 const std::string& out, const std::string& log_path) {
    RunConfig rc = parse_run_config(config_path);
    rc.train.stage = 0;
    Model model = Model::init(rc.model);
    toy::Manifest m = toy::read_manifest(data_path);
    TrainResult res = pretrain_backbone(m.images, model, rc.train, rc.loss);
    save_checkpoint(out, res.checkpoint);
    write_text(log_path.empty() ? out + ".log.jsonl" : log_path, logs_to_jsonl(res.logs));
    std::cout << "pretrained backbone checkpoint written to " << out << " (" << res.logs.size()
              << " steps)\n";
    return 0;
}

int cmd_train_stage1(const std::string& config_path, const std::string& data_path,
                     const std::string& out, const std::string& log_path,
                     const std::string& resume, const std::string& ablate) {
    RunConfig rc = parse_run_config(config_path);
    rc.train.stage = 1;
    rc.train.toggles.adapters_enabled = false;
    rc.train.toggles.hard_negatives_enabled = false;
    rc.train.toggles = parse_ablate(ablate, rc.train.toggles);
    Model model = Model::init(rc.model);
    if (!resume.empty()) {
        Checkpoint ck = load_checkpoint(resume);
        if (ck.stage != 1)
            throw StateError("--resume checkpoint is stage " + std::to_string(ck.stage) +
                             ", expected stage 1");
        model = Model::from_checkpoint(ck);
    }
    auto pairs = toy::generate_pairs(0, 0);
    {
        toy::Manifest m = toy::read_manifest(data_path);
        pairs = std::move(m.images);
    }
    TrainResult res = run_stage1(pairs, model, rc.train, rc.loss);
    save_checkpoint(out, res.checkpoint);
    write_text(log_path.empty() ? out + ".log.jsonl" : log_path, logs_to_jsonl(res.logs));
    std::cout << "stage-1 checkpoint written to " << out << " (" << res.logs.size()
              << " steps)\n";
    return 0;
}

int cmd_train_stage2(const std::string& config_path, const std::string& data_path,
                     const std::string& out, const std::string& log_path,
                     const std::string& stage1_path, const std::string& resume,
                     const std::string& ablate) {
    RunConfig rc = parse_run_config(config_path);
    rc.train.stage = 2;
    rc.train.toggles.adapters_enabled = true;
    rc.train.toggles.hard_negatives_enabled = true;
    rc.train.toggles = parse_ablate(ablate, rc.train.toggles);
    Checkpoint ck1 = load_checkpoint(stage1_path);
    if (!resume.empty()) {
        Checkpoint ckr = load_checkpoint(resume);
        if (ckr.stage != 2)
            throw StateError("--resume checkpoint is stage " + std::to_string(ckr.stage) +
                             ", expected stage 2");
        for (auto& [name, m] : ckr.params.params)
            if (name.rfind("adapter.", 0) == 0) ck1.params.at(name) = m;
    }
    toy::Manifest data = toy::read_manifest(data_path);
    TrainResult res = run_stage2(data, ck1, rc.train, rc.loss);
    save_checkpoint(out, res.checkpoint);
    write_text(log_path.empty() ? out + ".log.jsonl" : log_path, logs_to_jsonl(res.logs));
    std::cout << "stage-2 checkpoint written to " << out << " (" << res.logs.size()
              << " steps)\n";
    return 0;
}

Model model_for_eval(const std::string& checkpoint, const std::string& ablate) {
    Checkpoint ck = load_checkpoint(checkpoint);
    Model model = Model::from_checkpoint(ck);
    Toggles t;
    t.adapters_enabled = (ck.stage == 2);
    t.hard_negatives_enabled = false;
    model.toggles = parse_ablate(ablate, t);
    return model;
}

int cmd_eval(const std::string& checkpoint, const std::string& split, const std::string& klist,
             const std::string& jsonl_out, const std::string& ablate) {
    Model model = model_for_eval(checkpoint, ablate);
    toy::Manifest data = toy::read_manifest(split);
    CirMetrics m = evaluate_cir(model, data, parse_k_list(klist));
    std::cout << m.to_table();
    if (!jsonl_out.empty()) write_text(jsonl_out, m.to_jsonl());
    return 0;
}

int cmd_retrieve(const std::string& checkpoint, const std::string& data_path,
                 const std::string& reference, const std::string& modification, int k,
                 const std::string& ablate) {
    Model model = model_for_eval(checkpoint, ablate);
    toy::Manifest data = toy::read_manifest(data_path);

    std::vector<std::string> gallery_ids;
    std::vector<const toy::PairRecord*> gallery_recs;
    for (const auto& rec : data.images)
        if (!rec.id.empty() && rec.id[0] == 'g') {
            gallery_ids.push_back(rec.id);
            gallery_recs.push_back(&rec);
        }
    if (gallery_ids.empty()) throw ArgumentError("manifest has no gallery images (ids 'g...')");
    Mat gallery((int)gallery_ids.size(), model.cfg.embed_dim);
    for (int i = 0; i < (int)gallery_ids.size(); ++i) {
        Image img = toy::render(gallery_recs[i]->spec, model.cfg.image_size);
        gallery.set_row(i, model.encode_image(img).v_g);
    }
    normalize_rows_inplace(gallery);
    RetrievalIndex index(gallery_ids, std::move(gallery));

    const auto& ref = data.image(reference);
    Image img = toy::render(ref.spec, model.cfg.image_size);
    VisualFeatures vf = model.encode_image(img);
    TextFeatures tf =
        model.encode_with_pseudo(vf, PromptTemplate::p2(), modification,
                                 model.toggles.vsi_enabled, model.toggles.adapters_enabled);
    Mat q = tf.s_g;
    normalize_rows_inplace(q);
    QueryResult r = search(index, q, std::min<int>(k, index.size()), reference);

    std::cout << "rank  id        score\n";
    std::cout.setf(std::ios::fixed);
    std::cout.precision(4);
    for (size_t i = 0; i < r.ranked_ids.size(); ++i)
        std::cout << (i + 1) << "     " << r.ranked_ids[i] << "   " << r.scores[i] << "\n";
    return 0;
}

int cmd_inspect(const std::string& checkpoint) {
    Checkpoint ck = load_checkpoint(checkpoint);
    std::cout << "stage: " << ck.stage << "\n";
    const ModelConfig& c = ck.config;
    std::cout << "config: embed_dim=" << c.embed_dim << " image_size=" << c.image_size
              << " patch_size=" << c.patch_size << " max_tokens=" << c.max_tokens
              << " layers_img=" << c.num_layers_img << " layers_txt=" << c.num_layers_txt
              << " heads=" << c.num_heads << " vocab=" << c.vocab_size
              << " adapter_dim=" << c.adapter_dim << " latent_dim=" << c.latent_dim
              << " seed=" << c.seed << "\n";
    Model model = Model::from_checkpoint(ck);
    std::cout << "parameter groups:\n";
    for (const auto& [group, count] : model.parameter_group_counts())
        std::cout << "  " << group << ": " << count << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"toy two-stage composed image retrieval"};
    app.require_subcommand(1);

    std::string kind = "pairs", out, config, data, resume, ablate, stage1, log_path;
    std::string checkpoint, split, klist = "1,5,10,50", jsonl_out, reference, modification;
    int n = 0, gallery = 256, pool = 64, k = 10;
    uint64_t seed = 0;
    double noise = 0.0;
    bool partial = false, force = false;

    auto* gen = app.add_subcommand("gen-data", "generate a toy dataset manifest");
    gen->add_option("--kind", kind, "pairs|triplets|multi-target");
    gen->add_option("--n", n, "number of records")->required();
    gen->add_option("--seed", seed, "generation seed");
    gen->add_option("--out", out, "output manifest path")->required();
    gen->add_option("--gallery", gallery, "gallery size (triplet kinds)");
    gen->add_option("--pool", pool, "distinct-spec pool size (multi-target)");
    gen->add_option("--noise", noise, "fraction of corrupted modifications");
    gen->add_flag("--partial", partial, "drop caption attributes with p=0.5");
    gen->add_flag("--force", force, "overwrite existing output");

    auto* pre = app.add_subcommand("pretrain", "contrastively pretrain the dual-encoder backbone");
    pre->add_option("--config", config)->required();
    pre->add_option("--data", data, "pairs manifest")->required();
    pre->add_option("--out", out, "checkpoint path")->required();
    pre->add_option("--log", log_path, "metrics log path (default <out>.log.jsonl)");

    auto* t1 = app.add_subcommand("train-stage1", "train the textual-inversion stage");
    t1->add_option("--config", config)->required();
    t1->add_option("--data", data, "pairs manifest")->required();
    t1->add_option("--out", out, "checkpoint path")->required();
    t1->add_option("--log", log_path, "metrics log path (default <out>.log.jsonl)");
    t1->add_option("--resume", resume, "stage-1 checkpoint to continue from");
    t1->add_option("--ablate", ablate, "comma list key=on|off (vsi,sta,adapters,hard_negatives)");

    auto* t2 = app.add_subcommand("train-stage2", "train the composing adapters");
    t2->add_option("--config", config)->required();
    t2->add_option("--data", data, "triplet manifest")->required();
    t2->add_option("--out", out, "checkpoint path")->required();
    t2->add_option("--log", log_path, "metrics log path (default <out>.log.jsonl)");
    t2->add_option("--stage1-checkpoint", stage1)->required();
    t2->add_option("--resume", resume, "stage-2 checkpoint to continue from");
    t2->add_option("--ablate", ablate, "comma list key=on|off (vsi,sta,adapters,hard_negatives)");

    auto* ev = app.add_subcommand("eval", "evaluate composed retrieval on a split");
    ev->add_option("--checkpoint", checkpoint)->required();
    ev->add_option("--split", split, "triplet manifest")->required();
    ev->add_option("--k", klist, "comma list of cutoffs");
    ev->add_option("--jsonl", jsonl_out, "also write metrics as JSONL");
    ev->add_option("--ablate", ablate, "comma list key=on|off");

    auto* rt = app.add_subcommand("retrieve", "run one composed query");
    rt->add_option("--checkpoint", checkpoint)->required();
    rt->add_option("--data", data, "manifest providing gallery + reference")->required();
    rt->add_option("--reference", reference, "reference image id")->required();
    rt->add_option("--modification", modification, "modification text")->required();
    rt->add_option("--k", k, "number of results");
    rt->add_option("--ablate", ablate, "comma list key=on|off");

    auto* in = app.add_subcommand("inspect", "describe a checkpoint");
    in->add_option("--checkpoint", checkpoint)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(kind, n, seed, out, gallery, pool, noise, partial, force);
        if (pre->parsed()) return cmd_pretrain(config, data, out, log_path);
        if (t1->parsed()) return cmd_train_stage1(config, data, out, log_path, resume, ablate);
        if (t2->parsed())
            return cmd_train_stage2(config, data, out, log_path, stage1, resume, ablate);
        if (ev->parsed()) return cmd_eval(checkpoint, split, klist, jsonl_out, ablate);
        if (rt->parsed()) return cmd_retrieve(checkpoint, data, reference, modification, k, ablate);
        if (in->parsed()) return cmd_inspect(checkpoint);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
