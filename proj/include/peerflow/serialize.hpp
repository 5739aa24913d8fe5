#pragma once

// Canonical tree serialization of the domain types. Field names match the
// domain model one-to-one; the same encoding is used on the wire and in traces.

#include <json.hpp>

#include "peerflow/core.hpp"

namespace peerflow {

using json = nlohmann::json;

template <typename Tag>
void to_json(json& j, const Id<Tag>& id) {
  j = id.str();
}
template <typename Tag>
void from_json(const json& j, Id<Tag>& id) {
  id = Id<Tag>::parse(j.get<std::string>());
}

void to_json(json& j, const DataVersion& v);
void from_json(const json& j, DataVersion& v);

void to_json(json& j, AccessMode m);
void from_json(const json& j, AccessMode& m);
void to_json(json& j, ProcessorKind k);
void from_json(const json& j, ProcessorKind& k);
void to_json(json& j, TaskState s);
void from_json(const json& j, TaskState& s);

void to_json(json& j, const ResourceConstraints& c);
void from_json(const json& j, ResourceConstraints& c);

void to_json(json& j, const TaskKind& k);
void from_json(const json& j, TaskKind& k);

void to_json(json& j, const Param& p);
void from_json(const json& j, Param& p);

void to_json(json& j, const TaskSpec& s);
void from_json(const json& j, TaskSpec& s);

void to_json(json& j, const ResourcePool& p);
void from_json(const json& j, ResourcePool& p);

void to_json(json& j, const Endpoint& e);
void from_json(const json& j, Endpoint& e);

void to_json(json& j, const AgentDescriptor& a);
void from_json(const json& j, AgentDescriptor& a);

/// Parses a JSON document, mapping syntax and schema errors to Errc::InvalidArgument.
template <typename T>
T parse_as(std::string_view text) {
  try {
    return json::parse(text).get<T>();
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidArgument, e.what());
  }
}

}  // namespace peerflow

// Scalar is a variant of standard types only, so ADL cannot find peerflow's overloads.
template <>
struct nlohmann::adl_serializer<peerflow::Scalar> {
  static void to_json(json& j, const peerflow::Scalar& s);
  static void from_json(const json& j, peerflow::Scalar& s);
};
