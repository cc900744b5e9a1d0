#include "tscir/retrieval.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "tscir/errors.hpp"

namespace tscir {

RetrievalIndex::RetrievalIndex(std::vector<std::string> ids, Mat embeddings)
    : ids_(std::move(ids)), embeddings_(std::move(embeddings)) {
    if (static_cast<int>(ids_.size()) != embeddings_.rows)
        throw ArgumentError("index ids and embedding rows disagree");
    std::set<std::string> seen;
    for (const auto& id : ids_)
        if (!seen.insert(id).second) throw ArgumentError("duplicate gallery id: " + id);
    for (int r = 0; r < embeddings_.rows; ++r) {
        double n = row_norm(embeddings_, r);
        if (std::fabs(n - 1.0) > 1e-6)
            throw ContractViolation("gallery row " + std::to_string(r) + " not unit-normalized");
    }
}

QueryResult search(const RetrievalIndex& index, const Mat& query_row, int K,
                   const std::string& query_id) {
    const int G = index.size();
    if (K > G)
        throw ArgumentError("K=" + std::to_string(K) + " exceeds gallery size " +
                            std::to_string(G));
    std::vector<int> order(G);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> scores(G);
    for (int i = 0; i < G; ++i) scores[i] = dot_rows(query_row, 0, index.embeddings(), i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return index.ids()[a] < index.ids()[b];
    });

    QueryResult out;
    out.query_id = query_id;
    for (int i = 0; i < K; ++i) {
        out.ranked_ids.push_back(index.ids()[order[i]]);
        out.scores.push_back(scores[order[i]]);
    }
    return out;
}

namespace {
const std::set<std::string>& targets_for(const GroundTruth& gt, const QueryResult& r) {
    auto it = gt.find(r.query_id);
    if (it == gt.end()) throw ArgumentError("query missing from ground truth: " + r.query_id);
    if (it->second.empty()) throw ArgumentError("empty ground-truth set for: " + r.query_id);
    return it->second;
}
}  // namespace

double recall_at_k(const std::vector<QueryResult>& results, const GroundTruth& gt, int K) {
    if (results.empty()) throw ArgumentError("no query results");
    int hits = 0;
    for (const auto& r : results) {
        const auto& targets = targets_for(gt, r);
        int limit = std::min<int>(K, static_cast<int>(r.ranked_ids.size()));
        for (int i = 0; i < limit; ++i)
            if (targets.count(r.ranked_ids[i])) {
                ++hits;
                break;
            }
    }
    return static_cast<double>(hits) / results.size();
}

double map_at_k(const std::vector<QueryResult>& results, const GroundTruth& gt, int K) {
    if (results.empty()) throw ArgumentError("no query results");
    double sum_ap = 0;
    for (const auto& r : results) {
        const auto& targets = targets_for(gt, r);
        int limit = std::min<int>(K, static_cast<int>(r.ranked_ids.size()));
        int hits = 0;
        double ap = 0;
        for (int i = 0; i < limit; ++i) {
            if (targets.count(r.ranked_ids[i])) {
                ++hits;
                ap += static_cast<double>(hits) / (i + 1);
            }
        }
        ap /= std::min<int>(static_cast<int>(targets.size()), K);
        sum_ap += ap;
    }
    return sum_ap / results.size();
}

std::string CirMetrics::to_table() const {
    std::ostringstream ss;
    ss << "metric";
    for (const auto& [k, v] : recall) ss << "  R@" << k;
    for (const auto& [k, v] : map) ss << "  mAP@" << k;
    ss << "\nvalue ";
    ss.setf(std::ios::fixed);
    ss.precision(4);
    for (const auto& [k, v] : recall) ss << "  " << v;
    for (const auto& [k, v] : map) ss << "  " << v;
    ss << "\n";
    return ss.str();
}

std::string CirMetrics::to_jsonl() const {
    std::ostringstream ss;
    for (const auto& [k, v] : recall)
        ss << nlohmann::json{{"metric", "recall"}, {"k", k}, {"value", v}}.dump() << "\n";
    for (const auto& [k, v] : map)
        ss << nlohmann::json{{"metric", "map"}, {"k", k}, {"value", v}}.dump() << "\n";
    return ss.str();
}

CirMetrics evaluate_cir(const Model& model, const toy::Manifest& split,
                        const std::vector<int>& k_list) {
    std::vector<std::string> gallery_ids;
    std::vector<const toy::PairRecord*> gallery_recs;
    for (const auto& rec : split.images)
        if (!rec.id.empty() && rec.id[0] == 'g') {
            gallery_ids.push_back(rec.id);
            gallery_recs.push_back(&rec);
        }
    if (gallery_ids.empty()) throw ArgumentError("split has no gallery images (ids 'g...')");

    const int G = static_cast<int>(gallery_ids.size());
    Mat gallery(G, model.cfg.embed_dim);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < G; ++i) {
        Image img = toy::render(gallery_recs[i]->spec, model.cfg.image_size);
        VisualFeatures vf = model.encode_image(img);
        for (int c = 0; c < model.cfg.embed_dim; ++c) gallery.at(i, c) = vf.v_g.at(0, c);
    }
    normalize_rows_inplace(gallery);
    RetrievalIndex index(gallery_ids, std::move(gallery));

    int kmax = 0;
    for (int k : k_list) kmax = std::max(kmax, std::min(k, G));

    const int Q = static_cast<int>(split.triplets.size());
    if (Q == 0) throw ArgumentError("split has no triplet queries");
    std::vector<QueryResult> results(Q);
    GroundTruth gt;
    for (const auto& t : split.triplets)
        gt[t.id] = std::set<std::string>(t.target_ids.begin(), t.target_ids.end());

#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < Q; ++i) {
        const auto& t = split.triplets[i];
        const auto& ref = split.image(t.reference_id);
        Image img = toy::render(ref.spec, model.cfg.image_size);
        VisualFeatures vf = model.encode_image(img);
        TextFeatures tf =
            model.encode_with_pseudo(vf, PromptTemplate::p2(), t.modification,
                                     model.toggles.vsi_enabled, model.toggles.adapters_enabled);
        Mat q = tf.s_g;
        normalize_rows_inplace(q);
        results[i] = search(index, q, kmax, t.id);
    }

    CirMetrics m;
    m.num_queries = Q;
    m.gallery_size = G;
    for (int k : k_list) {
        int kk = std::min(k, G);
        m.recall[k] = recall_at_k(results, gt, kk);
        m.map[k] = map_at_k(results, gt, kk);
    }
    return m;
}

}  // namespace tscir
