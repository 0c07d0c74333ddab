#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "geoaddr/address.hpp"
#include "geoaddr/world.hpp"

namespace geoaddr {

using NodeId = std::uint32_t;

// 3-bit edge type mask. 0 means "no edge" and doubles as padding downstream.
struct EdgeCode {
    static constexpr std::uint8_t kDeliveryRoute = 1u << 0;
    static constexpr std::uint8_t kAoiColocate = 1u << 1;
    static constexpr std::uint8_t kAlias = 1u << 2;
    static constexpr int kNumCodes = 8;

    std::uint8_t bits = 0;

    bool has(std::uint8_t flag) const { return (bits & flag) != 0; }
    bool operator==(const EdgeCode&) const = default;
};

struct AddressNode {
    NodeId node_id = 0;
    NormalizedAddress address;
    PoiId poi_id = 0;
    AoiId aoi_id = 0;
    double lat = 0.0;
    double lon = 0.0;

    bool operator==(const AddressNode&) const = default;
};

void to_json(nlohmann::json& j, const AddressNode& n);
void from_json(const nlohmann::json& j, AddressNode& n);

class HeteroGraph {
public:
    NodeId add_node(AddressNode node);
    // ORs `bits` into the undirected edge a-b. Self-loops are ignored.
    void add_edge(NodeId a, NodeId b, std::uint8_t bits);

    std::size_t num_nodes() const { return nodes_.size(); }
    std::size_t num_edges() const;
    const std::vector<AddressNode>& nodes() const { return nodes_; }
    const AddressNode& node(NodeId v) const;
    bool contains(NodeId v) const { return v < nodes_.size(); }

    // Ascending NodeId. Throws NodeNotFound.
    std::vector<std::pair<NodeId, EdgeCode>> neighbors(NodeId v) const;
    std::size_t degree(NodeId v) const;
    EdgeCode edge(NodeId a, NodeId b) const;

    const std::map<NodeId, EdgeCode>& adjacency(NodeId v) const;

    bool operator==(const HeteroGraph&) const = default;

private:
    void check(NodeId v) const;

    std::vector<AddressNode> nodes_;
    std::vector<std::map<NodeId, EdgeCode>> adjacency_;
};

// Records must be ordered by (courier_id, sequence_id, step_index).
HeteroGraph build_graph(std::span<const DeliveryRecord> deliveries, const PoiTable& pois, const AdminTree& tree);

// nodes.jsonl + edges.tsv (node_a \t node_b \t bits, a < b) inside `dir`.
void save_graph(const HeteroGraph& g, const std::filesystem::path& dir);
HeteroGraph load_graph(const std::filesystem::path& dir);

}  // namespace geoaddr
