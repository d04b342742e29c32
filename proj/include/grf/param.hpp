#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "grf/tensor.hpp"

namespace grf {

// A named trainable tensor with an accumulated gradient slot.
template <typename S>
struct Parameter {
    std::string name;
    Tensor<S> value;
    Tensor<S> grad;

    Parameter(std::string n, Tensor<S> v)
        : name(std::move(n)), value(std::move(v)), grad(Tensor<S>::zeros(value.shape())) {}
};

// Registry of a model's parameters. Names are hierarchical dot paths and
// must be unique; registration order is the deterministic init-draw order.
template <typename S>
class ParamStore {
public:
    using Ptr = std::shared_ptr<Parameter<S>>;

    Ptr add(const std::string& name, Tensor<S> value) {
        if (index_.count(name))
            throw ConfigError("duplicate parameter name: " + name);
        auto p = std::make_shared<Parameter<S>>(name, std::move(value));
        index_[name] = items_.size();
        items_.push_back(p);
        return p;
    }

    const std::vector<Ptr>& all() const { return items_; }

    Ptr find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : items_[it->second];
    }

    long long total_count() const {
        long long n = 0;
        for (const auto& p : items_) n += p->value.numel();
        return n;
    }

    void zero_grads() {
        for (auto& p : items_) p->grad.fill(S(0));
    }

private:
    std::vector<Ptr> items_;
    std::map<std::string, size_t> index_;
};

// total + per-component breakdown keyed by the first name segment.
template <typename S>
std::pair<long long, std::map<std::string, long long>> count_parameters(const ParamStore<S>& ps) {
    long long total = 0;
    std::map<std::string, long long> by_component;
    for (const auto& p : ps.all()) {
        total += p->value.numel();
        std::string head = p->name.substr(0, p->name.find('.'));
        by_component[head] += p->value.numel();
    }
    return {total, by_component};
}

namespace detail {

template <typename S>
std::string format_decimal(S v);

template <>
inline std::string format_decimal<double>(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

template <>
inline std::string format_decimal<float>(float v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

}  // namespace detail

// Checkpoint format: one record per line,
//   name,shape_dims(space-separated),values(space-separated decimal)
// Records are ordered by name.
template <typename S>
void save_checkpoint(const ParamStore<S>& ps, const std::string& path) {
    std::vector<typename ParamStore<S>::Ptr> sorted = ps.all();
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a->name < b->name; });
    std::ofstream out(path);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    for (const auto& p : sorted) {
        out << p->name << ",";
        for (size_t i = 0; i < p->value.shape().size(); ++i) {
            if (i) out << " ";
            out << p->value.shape()[i];
        }
        out << ",";
        for (int64_t i = 0; i < p->value.numel(); ++i) {
            if (i) out << " ";
            out << detail::format_decimal<S>(p->value[i]);
        }
        out << "\n";
    }
    if (!out) throw IoError("write failure on checkpoint: " + path);
}

// Loads values into an existing store. Every parameter must be present with
// a matching shape and no extra records may appear; the first mismatch (in
// name order) is reported.
template <typename S>
void load_checkpoint(ParamStore<S>& ps, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint: " + path);

    std::map<std::string, std::pair<std::vector<int>, std::vector<S>>> records;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        size_t c1 = line.find(',');
        size_t c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            throw IoError("malformed checkpoint line " + std::to_string(lineno) + " in " + path);
        std::string name = line.substr(0, c1);
        std::istringstream shape_in(line.substr(c1 + 1, c2 - c1 - 1));
        std::vector<int> shape;
        int d;
        while (shape_in >> d) shape.push_back(d);
        std::istringstream val_in(line.substr(c2 + 1));
        std::vector<S> values;
        double v;
        while (val_in >> v) values.push_back(static_cast<S>(v));
        records[name] = {std::move(shape), std::move(values)};
    }

    std::vector<typename ParamStore<S>::Ptr> sorted = ps.all();
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a->name < b->name; });
    for (const auto& p : sorted) {
        auto it = records.find(p->name);
        if (it == records.end())
            throw IoError("checkpoint mismatch: missing parameter " + p->name);
        const auto& [shape, values] = it->second;
        if (shape != p->value.shape())
            throw IoError("checkpoint mismatch: parameter " + p->name + " has shape " +
                          format_shape(shape) + ", model expects " + format_shape(p->value.shape()));
        if (static_cast<int64_t>(values.size()) != p->value.numel())
            throw IoError("checkpoint mismatch: parameter " + p->name + " value count");
        for (int64_t i = 0; i < p->value.numel(); ++i) p->value[i] = values[static_cast<size_t>(i)];
        records.erase(it);
    }
    if (!records.empty())
        throw IoError("checkpoint mismatch: unexpected parameter " + records.begin()->first);
}

}  // namespace grf
