#pragma once

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "grf/model.hpp"

namespace grf {

// Embeddings after each fusion stage for a whole split: one [N, d_model]
// tensor per stage h_1 .. h_n. For an empty split the stage tensors stay
// empty and only width/ids/labels metadata is meaningful.
template <typename S>
struct StageEmbeddings {
    std::vector<Tensor<S>> stages;
    std::vector<int64_t> ids;
    Tensor<S> labels;
    int width = 0;

    int64_t count() const { return static_cast<int64_t>(ids.size()); }
};

template <typename S>
StageEmbeddings<S> compute_stage_embeddings(const GrfModel<S>& model,
                                            const ModalityBatch<S>& split, int batch_size) {
    const int64_t n_samples = split.size();
    const int n_stages = model.config().n_modalities();
    const int d = model.config().d_model;

    StageEmbeddings<S> out;
    out.ids = split.ids;
    out.labels = split.labels;
    out.width = d;
    out.stages.resize(static_cast<size_t>(n_stages));
    if (n_samples == 0) return out;

    for (auto& s : out.stages) s = Tensor<S>::zeros({static_cast<int>(n_samples), d});
    Mode eval_mode;
    for (int64_t lo = 0; lo < n_samples; lo += batch_size) {
        const int64_t hi = std::min(n_samples, lo + batch_size);
        std::vector<int64_t> rows(static_cast<size_t>(hi - lo));
        std::iota(rows.begin(), rows.end(), lo);
        ModalityBatch<S> mb = split.gather(rows);
        Tape<S> tape;
        FusionTrace<S> trace;
        model.forward(tape, mb, eval_mode, &trace);
        for (int k = 0; k < n_stages; ++k) {
            const Tensor<S>& h = tape.value(trace.stages[static_cast<size_t>(k)]);
            for (int64_t b = lo; b < hi; ++b)
                for (int j = 0; j < d; ++j)
                    out.stages[static_cast<size_t>(k)].at({static_cast<int>(b), j}) =
                        h.at({static_cast<int>(b - lo), j});
        }
    }
    return out;
}

// One CSV per stage: sample_id,label,h0..h{d-1}, named stage1.csv ..
// stage<n>.csv under dir. An empty split still produces header-only files.
template <typename S>
std::vector<std::string> write_stage_files(const StageEmbeddings<S>& emb,
                                           const std::string& dir) {
    std::vector<std::string> paths;
    for (size_t k = 0; k < emb.stages.size(); ++k) {
        const std::string path = dir + "/stage" + std::to_string(k + 1) + ".csv";
        std::ofstream out(path);
        if (!out) throw IoError("cannot open stage file for writing: " + path);
        out << "sample_id,label";
        for (int j = 0; j < emb.width; ++j) out << ",h" << j;
        out << "\n";
        for (int64_t i = 0; i < emb.count(); ++i) {
            out << emb.ids[static_cast<size_t>(i)] << ","
                << detail::format_decimal<S>(emb.labels[i]);
            for (int j = 0; j < emb.width; ++j)
                out << ","
                    << detail::format_decimal<S>(emb.stages[k].at({static_cast<int>(i), j}));
            out << "\n";
        }
        if (!out) throw IoError("write failure on stage file: " + path);
        paths.push_back(path);
    }
    return paths;
}

// Reads one stage file back; the result has a single entry in stages.
template <typename S>
StageEmbeddings<S> read_stage_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open stage file: " + path);
    std::string header;
    if (!std::getline(in, header) || header.rfind("sample_id,label", 0) != 0)
        throw IoError("stage file has an unexpected header: " + path);
    int d = -1;  // commas minus the id and label columns
    for (char ch : header)
        if (ch == ',') ++d;

    std::vector<int64_t> ids;
    std::vector<S> labels, values;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string field;
        if (!std::getline(row, field, ',')) throw IoError("stage file: bad row: " + line);
        ids.push_back(std::stoll(field));
        if (!std::getline(row, field, ',')) throw IoError("stage file: bad row: " + line);
        labels.push_back(static_cast<S>(std::stod(field)));
        int got = 0;
        while (std::getline(row, field, ',')) {
            values.push_back(static_cast<S>(std::stod(field)));
            ++got;
        }
        if (got != d) throw IoError("stage file: row width mismatch: " + line);
    }

    StageEmbeddings<S> out;
    out.ids = ids;
    out.width = d;
    out.stages.resize(1);
    const int n = static_cast<int>(ids.size());
    if (n == 0) return out;
    out.labels = Tensor<S>({n});
    for (int i = 0; i < n; ++i) out.labels[i] = labels[static_cast<size_t>(i)];
    out.stages[0] = Tensor<S>({n, d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            out.stages[0].at({i, j}) = values[static_cast<size_t>(i) * d + j];
    return out;
}

}  // namespace grf
