#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "tscir/mat.hpp"
#include "tscir/model.hpp"
#include "tscir/toydata.hpp"

namespace tscir {

// Immutable id-keyed gallery of unit-normalized embeddings.
class RetrievalIndex {
public:
    RetrievalIndex(std::vector<std::string> ids, Mat embeddings);

    int size() const { return static_cast<int>(ids_.size()); }
    const std::vector<std::string>& ids() const { return ids_; }
    const Mat& embeddings() const { return embeddings_; }

private:
    std::vector<std::string> ids_;
    Mat embeddings_;
};

struct QueryResult {
    std::string query_id;
    std::vector<std::string> ranked_ids;
    std::vector<double> scores;  // descending; ties broken by ascending id
};

QueryResult search(const RetrievalIndex& index, const Mat& query_row, int K,
                   const std::string& query_id = "");

using GroundTruth = std::map<std::string, std::set<std::string>>;

double recall_at_k(const std::vector<QueryResult>& results, const GroundTruth& gt, int K);
// AP@K normalized by min(|targets|, K), CIRCO-style.
double map_at_k(const std::vector<QueryResult>& results, const GroundTruth& gt, int K);

struct CirMetrics {
    std::map<int, double> recall;
    std::map<int, double> map;
    int num_queries = 0;
    int gallery_size = 0;

    std::string to_table() const;  // aligned plain-text table
    std::string to_jsonl() const;  // one record per metric
};

CirMetrics evaluate_cir(const Model& model, const toy::Manifest& split,
                        const std::vector<int>& k_list);

}  // namespace tscir
