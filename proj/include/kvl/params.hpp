#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "kvl/tape.hpp"
#include "kvl/tensor.hpp"

namespace kvl {

// Owns every trainable tensor of a model. Tape leaves reference these values
// without copying; the optimizer mutates them between passes (single-writer).
//
// KAN edge parameters are stored packed (one tensor per field) but serialize
// as one record per edge ("prefix.edge.{q}.{p}.coeffs" / ".w1" / ".w2").
class ParamStore {
  public:
    std::size_t add(std::string name, Tensor init);

    // Packed KAN field; edge_dims are the leading edge indices of `init`
    // (e.g. {out,in} for a layer, {co,ci,kh,kw} for a conv kernel) and
    // `field` is one of "coeffs", "w1", "w2".
    std::size_t add_edges(std::string prefix, Tensor init, std::vector<std::size_t> edge_dims, std::string field);

    std::size_t size() const { return entries_.size(); }
    Tensor& value(std::size_t id) { return *entries_[id].value; }
    const Tensor& value(std::size_t id) const { return *entries_[id].value; }
    std::shared_ptr<const Tensor> shared(std::size_t id) const { return entries_[id].value; }
    const std::string& name(std::size_t id) const { return entries_[id].name; }

    // Trainable tape leaf keyed by the store id.
    Var leaf(Tape& tape, std::size_t id) const { return tape.param(shared(id), id); }

    std::size_t total_scalars() const;

    // Flat named-tensor view used by the KVLN checkpoint container.
    std::vector<std::pair<std::string, Tensor>> named_records() const;
    void load_named_records(const std::vector<std::pair<std::string, Tensor>>& records);

  private:
    struct Entry {
        std::string name;
        std::shared_ptr<Tensor> value;
        bool per_edge = false;
        std::vector<std::size_t> edge_dims;
        std::string field;
    };
    std::vector<Entry> entries_;

    template <class Fn>
    void for_each_record(const Entry& e, Fn&& fn) const;
};

}  // namespace kvl
