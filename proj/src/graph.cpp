#include "geoaddr/graph.hpp"

#include <fstream>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "geoaddr/errors.hpp"
#include "geoaddr/io.hpp"

namespace geoaddr {

void to_json(nlohmann::json& j, const AddressNode& n) {
    j = nlohmann::json{{"node_id", n.node_id}, {"address", n.address}, {"poi_id", n.poi_id},
                       {"aoi_id", n.aoi_id},   {"lat", n.lat},         {"lon", n.lon}};
}

void from_json(const nlohmann::json& j, AddressNode& n) {
    j.at("node_id").get_to(n.node_id);
    j.at("address").get_to(n.address);
    j.at("poi_id").get_to(n.poi_id);
    j.at("aoi_id").get_to(n.aoi_id);
    j.at("lat").get_to(n.lat);
    j.at("lon").get_to(n.lon);
}

NodeId HeteroGraph::add_node(AddressNode node) {
    if (!(node.lat >= -90.0 && node.lat <= 90.0 && node.lon >= -180.0 && node.lon <= 180.0))
        throw DomainError("node coordinates out of range");
    node.node_id = static_cast<NodeId>(nodes_.size());
    nodes_.push_back(std::move(node));
    adjacency_.emplace_back();
    return nodes_.back().node_id;
}

void HeteroGraph::add_edge(NodeId a, NodeId b, std::uint8_t bits) {
    check(a);
    check(b);
    if (a == b || bits == 0) return;
    adjacency_[a][b].bits |= bits;
    adjacency_[b][a].bits |= bits;
}

std::size_t HeteroGraph::num_edges() const {
    std::size_t twice = 0;
    for (const auto& adj : adjacency_) twice += adj.size();
    return twice / 2;
}

void HeteroGraph::check(NodeId v) const {
    if (!contains(v)) throw NodeNotFound("node " + std::to_string(v));
}

const AddressNode& HeteroGraph::node(NodeId v) const {
    check(v);
    return nodes_[v];
}

std::vector<std::pair<NodeId, EdgeCode>> HeteroGraph::neighbors(NodeId v) const {
    check(v);
    return {adjacency_[v].begin(), adjacency_[v].end()};
}

std::size_t HeteroGraph::degree(NodeId v) const {
    check(v);
    return adjacency_[v].size();
}

EdgeCode HeteroGraph::edge(NodeId a, NodeId b) const {
    check(a);
    check(b);
    auto it = adjacency_[a].find(b);
    return it == adjacency_[a].end() ? EdgeCode{} : it->second;
}

const std::map<NodeId, EdgeCode>& HeteroGraph::adjacency(NodeId v) const {
    check(v);
    return adjacency_[v];
}

HeteroGraph build_graph(std::span<const DeliveryRecord> deliveries, const PoiTable& pois, const AdminTree& tree) {
    HeteroGraph g;
    std::unordered_map<PoiId, NodeId> node_of;
    std::map<AoiId, std::vector<NodeId>> by_aoi;
    for (const auto& p : pois.records()) {
        AddressNode n;
        n.address = p.canonical();
        try {
            admin_path(n.address, tree);
        } catch (const InconsistentHierarchy& e) {
            throw IngestError("poi " + std::to_string(p.poi_id) + ": " + e.what());
        }
        n.poi_id = p.poi_id;
        n.aoi_id = p.aoi_id;
        n.lat = p.location.lat;
        n.lon = p.location.lon;
        const NodeId id = g.add_node(std::move(n));
        node_of.emplace(p.poi_id, id);
        by_aoi[p.aoi_id].push_back(id);
    }

    for (const auto& [aoi, members] : by_aoi)
        for (std::size_t i = 0; i < members.size(); ++i)
            for (std::size_t j = i + 1; j < members.size(); ++j) g.add_edge(members[i], members[j], EdgeCode::kAoiColocate);

    for (const auto& [a, b] : pois.alias_pairs()) {
        if (!node_of.count(a) || !node_of.count(b)) throw IngestError("alias pair references unknown poi");
        g.add_edge(node_of.at(a), node_of.at(b), EdgeCode::kAlias);
    }

    const DeliveryRecord* prev = nullptr;
    for (std::size_t i = 0; i < deliveries.size(); ++i) {
        const auto& rec = deliveries[i];
        auto locator = [&] {
            return "record " + std::to_string(i) + " (courier " + std::to_string(rec.courier_id) + ", sequence " +
                   std::to_string(rec.sequence_id) + ", step " + std::to_string(rec.step_index) + ")";
        };
        auto it = node_of.find(rec.poi_id);
        if (it == node_of.end()) throw IngestError(locator() + " references unknown poi_id " + std::to_string(rec.poi_id));
        if (prev) {
            const auto pk = std::tie(prev->courier_id, prev->sequence_id, prev->step_index);
            const auto ck = std::tie(rec.courier_id, rec.sequence_id, rec.step_index);
            if (!(pk < ck)) throw IngestError(locator() + " is out of order");
            if (prev->courier_id == rec.courier_id && prev->sequence_id == rec.sequence_id)
                g.add_edge(node_of.at(prev->poi_id), it->second, EdgeCode::kDeliveryRoute);
        }
        prev = &rec;
    }
    return g;
}

void save_graph(const HeteroGraph& g, const std::filesystem::path& dir) {
    std::vector<nlohmann::json> rows;
    rows.reserve(g.num_nodes());
    for (const auto& n : g.nodes()) rows.emplace_back(n);
    io::write_jsonl(dir / "nodes.jsonl", rows);
    std::string tsv;
    for (NodeId a = 0; a < g.num_nodes(); ++a)
        for (const auto& [b, code] : g.adjacency(a))
            if (a < b) tsv += std::to_string(a) + '\t' + std::to_string(b) + '\t' + std::to_string(code.bits) + '\n';
    io::write_text(dir / "edges.tsv", tsv);
}

HeteroGraph load_graph(const std::filesystem::path& dir) {
    HeteroGraph g;
    io::for_each_jsonl(dir / "nodes.jsonl", [&](const nlohmann::json& j, std::size_t line) {
        auto n = j.get<AddressNode>();
        if (n.node_id != g.num_nodes())
            throw FormatError("nodes.jsonl:" + std::to_string(line) + ": node ids must be contiguous from 0");
        g.add_node(std::move(n));
    });
    std::ifstream in(dir / "edges.tsv");
    if (!in) throw FormatError("cannot open " + (dir / "edges.tsv").string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        long long a = -1, b = -1, bits = -1;
        std::string extra;
        if (!(ss >> a >> b >> bits) || (ss >> extra) || a < 0 || b < 0 || a >= b || bits < 1 || bits > 7 ||
            static_cast<std::size_t>(b) >= g.num_nodes())
            throw FormatError("edges.tsv:" + std::to_string(line_no) + ": malformed edge line");
        g.add_edge(static_cast<NodeId>(a), static_cast<NodeId>(b), static_cast<std::uint8_t>(bits));
    }
    return g;
}

}  // namespace geoaddr
