#include "peerflow/serialize.hpp"

namespace peerflow {

void to_json(json& j, const DataVersion& v) { j = json{{"data", v.data}, {"version", v.version}}; }
void from_json(const json& j, DataVersion& v) {
  j.at("data").get_to(v.data);
  j.at("version").get_to(v.version);
}

void to_json(json& j, AccessMode m) { j = to_string(m); }
void from_json(const json& j, AccessMode& m) { m = parse_access_mode(j.get<std::string>()); }
void to_json(json& j, ProcessorKind k) { j = to_string(k); }
void from_json(const json& j, ProcessorKind& k) { k = parse_processor_kind(j.get<std::string>()); }
void to_json(json& j, TaskState s) { j = to_string(s); }
void from_json(const json& j, TaskState& s) { s = parse_task_state(j.get<std::string>()); }

void to_json(json& j, const ResourceConstraints& c) {
  j = json{{"cores", c.cores},
           {"memory_mb", c.memory_mb},
           {"software_tags", c.software_tags},
           {"processor_kind", c.processor_kind},
           {"nodes", c.nodes}};
}
void from_json(const json& j, ResourceConstraints& c) {
  c = ResourceConstraints{};
  c.cores = j.value("cores", 1);
  c.memory_mb = j.value("memory_mb", std::int64_t{0});
  if (j.contains("software_tags")) j.at("software_tags").get_to(c.software_tags);
  if (j.contains("processor_kind")) j.at("processor_kind").get_to(c.processor_kind);
  c.nodes = j.value("nodes", 1);
}

void to_json(json& j, const TaskKind& k) {
  j = json{{"type", kind_name(k)}};
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ShellKind>) {
          j["command"] = v.command;
        } else if constexpr (std::is_same_v<T, ServiceKind>) {
          j["url"] = v.url;
          j["method"] = v.method;
        } else {
          j["function"] = v.function;
        }
      },
      k);
}
void from_json(const json& j, TaskKind& k) {
  auto type = j.at("type").get<std::string>();
  if (type == "BUILTIN") k = BuiltinKind{j.at("function").get<std::string>()};
  else if (type == "GANG") k = GangKind{j.at("function").get<std::string>()};
  else if (type == "SHELL") k = ShellKind{j.at("command").get<std::string>()};
  else if (type == "SERVICE") k = ServiceKind{j.at("url").get<std::string>(), j.value("method", std::string("POST"))};
  else throw Error(Errc::InvalidArgument, "unknown task kind '" + type + "'");
}

void to_json(json& j, const Param& p) { j = json{{"data", p.data}, {"mode", p.mode}}; }
void from_json(const json& j, Param& p) {
  j.at("data").get_to(p.data);
  j.at("mode").get_to(p.mode);
}

void to_json(json& j, const TaskSpec& s) {
  j = json{{"app", s.app},
           {"kind", s.kind},
           {"params", s.params},
           {"literals", s.literals},
           {"constraints", s.constraints}};
}
void from_json(const json& j, TaskSpec& s) {
  j.at("app").get_to(s.app);
  j.at("kind").get_to(s.kind);
  s.params = j.value("params", std::vector<Param>{});
  s.literals.clear();
  if (j.contains("literals")) j.at("literals").get_to(s.literals);
  s.constraints = j.contains("constraints") ? j.at("constraints").get<ResourceConstraints>() : ResourceConstraints{};
}

void to_json(json& j, const ResourcePool& p) {
  j = json{{"total_cores", p.total_cores},
           {"total_memory_mb", p.total_memory_mb},
           {"reserved_cores", p.reserved_cores},
           {"reserved_memory_mb", p.reserved_memory_mb}};
}
void from_json(const json& j, ResourcePool& p) {
  p.total_cores = j.at("total_cores").get<int>();
  p.total_memory_mb = j.at("total_memory_mb").get<std::int64_t>();
  p.reserved_cores = j.value("reserved_cores", 0);
  p.reserved_memory_mb = j.value("reserved_memory_mb", std::int64_t{0});
}

void to_json(json& j, const Endpoint& e) { j = e.str(); }
void from_json(const json& j, Endpoint& e) { e = Endpoint::parse(j.get<std::string>()); }

void to_json(json& j, const AgentDescriptor& a) {
  j = json{{"agent_id", a.agent_id},
           {"name", a.name},
           {"endpoint", a.endpoint},
           {"capacity", a.capacity},
           {"software_tags", a.software_tags},
           {"processor_kinds", a.processor_kinds}};
}
void from_json(const json& j, AgentDescriptor& a) {
  j.at("agent_id").get_to(a.agent_id);
  a.name = j.value("name", std::string{});
  j.at("endpoint").get_to(a.endpoint);
  j.at("capacity").get_to(a.capacity);
  a.software_tags = j.value("software_tags", std::set<std::string>{});
  a.processor_kinds.clear();
  if (j.contains("processor_kinds")) j.at("processor_kinds").get_to(a.processor_kinds);
  else a.processor_kinds = {ProcessorKind::CPU};
}

}  // namespace peerflow

void nlohmann::adl_serializer<peerflow::Scalar>::to_json(json& j, const peerflow::Scalar& s) {
  std::visit([&](const auto& v) { j = v; }, s);
}

void nlohmann::adl_serializer<peerflow::Scalar>::from_json(const json& j, peerflow::Scalar& s) {
  if (j.is_number_integer()) s = j.get<std::int64_t>();
  else if (j.is_number()) s = j.get<double>();
  else if (j.is_string()) s = j.get<std::string>();
  else throw peerflow::Error(peerflow::Errc::InvalidArgument, "literal must be an integer, float or string");
}
