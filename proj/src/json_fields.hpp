#pragma once

#include "mvbcf/config.hpp"

#include <array>
#include <exception>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace mvbcf::detail {

[[noreturn]] inline void bad(const std::string& key, const std::string& what) {
  throw Error(ErrorKind::Configuration, key + ": " + what);
}

// Reads keys of one JSON object and rejects the ones nobody asked for.
class Fields {
 public:
  Fields(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) bad(where_.empty() ? "config" : where_, "expected an object");
  }

  ~Fields() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) bad(path(key), "unknown key");
    }
  }

  const Json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  void get(const std::string& key, int& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number_integer()) bad(path(key), "expected an integer");
      out = v->get<int>();
    }
  }
  void get(const std::string& key, std::uint64_t& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number_unsigned()) bad(path(key), "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const std::string& key, double& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number()) bad(path(key), "expected a number");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, bool& out) {
    if (const Json* v = find(key)) {
      if (!v->is_boolean()) bad(path(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const Json* v = find(key)) {
      if (!v->is_string()) bad(path(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  void get(const std::string& key, std::optional<double>& out) {
    if (const Json* v = find(key)) {
      if (v->is_null()) {
        out.reset();
        return;
      }
      if (!v->is_number()) bad(path(key), "expected a number or null");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, std::array<double, 2>& out) {
    if (const Json* v = find(key)) out = pair(*v, path(key));
  }
  void get(const std::string& key, std::optional<std::array<double, 2>>& out) {
    if (const Json* v = find(key)) {
      if (v->is_null()) {
        out.reset();
      } else {
        out = pair(*v, path(key));
      }
    }
  }
  void get(const std::string& key, std::vector<int>& out) {
    if (const Json* v = find(key)) {
      if (!v->is_array()) bad(path(key), "expected an array of integers");
      out.clear();
      for (const Json& e : *v) {
        if (!e.is_number_integer()) bad(path(key), "expected an array of integers");
        out.push_back(e.get<int>());
      }
    }
  }
  void get(const std::string& key, std::optional<Vector>& out) {
    if (const Json* v = find(key)) {
      if (v->is_null()) {
        out.reset();
        return;
      }
      if (!v->is_array()) bad(path(key), "expected an array of numbers or null");
      Vector x(static_cast<Eigen::Index>(v->size()));
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_number()) bad(path(key), "expected an array of numbers or null");
        x(static_cast<Eigen::Index>(i)) = (*v)[i].get<double>();
      }
      out = x;
    }
  }

 private:
  static std::array<double, 2> pair(const Json& v, const std::string& key) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
      bad(key, "expected a two-element numeric array");
    }
    return {v[0].get<double>(), v[1].get<double>()};
  }

  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace mvbcf::detail
