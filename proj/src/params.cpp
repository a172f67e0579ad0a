#include "kvl/params.hpp"

#include <algorithm>
#include <unordered_map>

namespace kvl {

std::size_t ParamStore::add(std::string name, Tensor init) {
    entries_.push_back(Entry{std::move(name), std::make_shared<Tensor>(std::move(init)), false, {}, {}});
    return entries_.size() - 1;
}

std::size_t ParamStore::add_edges(std::string prefix, Tensor init, std::vector<std::size_t> edge_dims,
                                  std::string field) {
    std::size_t edges = 1;
    for (std::size_t d : edge_dims) edges *= d;
    if (edges == 0 || init.size() % edges != 0) {
        throw ArgError("add_edges: edge dims " + shape_str(edge_dims) + " do not divide tensor " +
                       shape_str(init.shape()));
    }
    entries_.push_back(Entry{std::move(prefix), std::make_shared<Tensor>(std::move(init)), true, std::move(edge_dims),
                             std::move(field)});
    return entries_.size() - 1;
}

std::size_t ParamStore::total_scalars() const {
    std::size_t n = 0;
    for (const Entry& e : entries_) n += e.value->size();
    return n;
}

template <class Fn>
void ParamStore::for_each_record(const Entry& e, Fn&& fn) const {
    if (!e.per_edge) {
        fn(e.name, 0, e.value->size(), e.value->shape());
        return;
    }
    std::size_t edges = 1;
    for (std::size_t d : e.edge_dims) edges *= d;
    const std::size_t tail = e.value->size() / edges;
    Shape tail_shape;
    if (tail > 1) tail_shape.push_back(tail);  // coeffs vector; w1/w2 are rank-0
    std::vector<std::size_t> idx(e.edge_dims.size(), 0);
    for (std::size_t flat = 0; flat < edges; ++flat) {
        std::string name = e.name + ".edge";
        for (std::size_t v : idx) name += "." + std::to_string(v);
        name += "." + e.field;
        fn(name, flat * tail, tail, tail_shape);
        for (std::size_t k = idx.size(); k-- > 0;) {
            if (++idx[k] < e.edge_dims[k]) break;
            idx[k] = 0;
        }
    }
}

std::vector<std::pair<std::string, Tensor>> ParamStore::named_records() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const Entry& e : entries_) {
        for_each_record(e, [&](const std::string& name, std::size_t off, std::size_t len, const Shape& shape) {
            Tensor t(shape);
            std::copy(e.value->data() + off, e.value->data() + off + len, t.data());
            out.emplace_back(name, std::move(t));
        });
    }
    return out;
}

void ParamStore::load_named_records(const std::vector<std::pair<std::string, Tensor>>& records) {
    struct Slot {
        std::size_t entry, off, len;
        Shape shape;
        bool filled = false;
    };
    std::unordered_map<std::string, Slot> expected;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        for_each_record(entries_[i], [&](const std::string& name, std::size_t off, std::size_t len, const Shape& shape) {
            if (!expected.emplace(name, Slot{i, off, len, shape}).second) {
                throw ConfigError("duplicate parameter record name: " + name);
            }
        });
    }
    for (const auto& [name, tensor] : records) {
        auto it = expected.find(name);
        if (it == expected.end()) throw ConfigError("checkpoint record '" + name + "' not present in model");
        Slot& slot = it->second;
        if (slot.filled) throw ConfigError("checkpoint record '" + name + "' appears twice");
        if (tensor.shape() != slot.shape || tensor.size() != slot.len) {
            throw ConfigError("checkpoint record '" + name + "' has shape " + shape_str(tensor.shape()) +
                              ", expected " + shape_str(slot.shape));
        }
        std::copy(tensor.data(), tensor.data() + slot.len, entries_[slot.entry].value->data() + slot.off);
        slot.filled = true;
    }
    for (const auto& [name, slot] : expected) {
        if (!slot.filled) throw ConfigError("checkpoint is missing parameter record '" + name + "'");
    }
}

}  // namespace kvl
