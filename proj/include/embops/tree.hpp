// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "embops/clients.hpp"
#include "embops/error.hpp"
#include "embops/operators.hpp"
#include "embops/trainer.hpp"

namespace embops {

// Generative-tree programs.
//
//   program := binding* expr
//   binding := "(let" NAME expr ")"
//   expr    := "(" OPNAME arg* kv* ")" | leaf | NAME
//   arg     := [":slot" INT] expr
//   leaf    := "(image" PATH ")" | "(text" STRING ")" | "(emb" REF ")"
//            | "(sample" OPNAME kv* ")"
//   kv      := ":seed" INT | ":scale" REAL
//
// `;` starts a comment that runs to the end of the line.

struct SourcePos {
    std::size_t line = 1;
    std::size_t column = 1;
};

class ParseError : public Error {
public:
    ParseError(SourcePos pos, const std::string& message);
    [[nodiscard]] std::size_t line() const noexcept { return pos_.line; }
    [[nodiscard]] std::size_t column() const noexcept { return pos_.column; }
    [[nodiscard]] const std::string& message() const noexcept { return message_; }

private:
    SourcePos pos_;
    std::string message_;
};

struct TreeNode;
using NodePtr = std::shared_ptr<const TreeNode>;

struct Leaf {
    enum class Kind { image, text, embedding, sample };
    Kind kind = Kind::embedding;
    std::string value;  // path, text, reference, or operator name for `sample`
    std::optional<std::uint64_t> seed;
    std::optional<double> scale;
};

struct Arg {
    std::optional<std::size_t> slot;  // explicit `:slot`
    NodePtr node;
};

struct Apply {
    OperatorName op = OperatorName::union_op;
    std::vector<Arg> args;
    std::optional<std::uint64_t> seed;
    std::optional<double> scale;
};

struct BindingRef {
    std::string name;
};

struct TreeNode {
    std::variant<Leaf, Apply, BindingRef> body;
    SourcePos pos;
};

struct TreeProgram {
    std::vector<std::pair<std::string, NodePtr>> bindings;  // definition order
    NodePtr root;
};

/// Structural equality; source positions are ignored.
bool structurally_equal(const TreeNode& a, const TreeNode& b);
bool structurally_equal(const TreeProgram& a, const TreeProgram& b);

TreeProgram parse_tree(const std::string& text);
/// Canonical text: one binding per line, single spaces, shortest round-trip reals.
std::string serialize(const TreeProgram& program);
std::string serialize(const TreeNode& node);

/// Name used for an operator in tree text (texture, scene, union, instruct, compose, id).
std::string tree_operator_name(OperatorName op);

/// Condition slot each argument of `apply` lands in.
std::vector<std::size_t> resolve_slots(const Apply& apply);

/// Operator models by name, loaded lazily or registered directly.
class OperatorRegistry {
public:
    void add(OperatorName op, std::shared_ptr<const OperatorModel> model);
    /// JSON object {"texturing": "ckpt/tex.ckpt", ...}; paths relative to the file.
    static OperatorRegistry from_file(const std::filesystem::path& path);
    [[nodiscard]] const OperatorModel& get(OperatorName op) const;
    [[nodiscard]] bool contains(OperatorName op) const { return models_.count(op) == 1; }
    /// Dimension of the registered models; empty when none are registered.
    [[nodiscard]] std::optional<std::size_t> dim() const;

private:
    std::map<OperatorName, std::shared_ptr<const OperatorModel>> models_;
};

struct EvalOptions {
    std::uint64_t seed = 0;
    std::size_t steps = 25;
    std::optional<double> renormalize_to;
    std::filesystem::path base_dir = ".";  // resolves relative leaf paths
    const EncoderClient* encoder = nullptr;
    /// Called once per evaluated node in post-order ("leaf emb x.pops", "apply union", ...).
    std::function<void(const std::string&)> trace;
};

/// Post-order evaluation. An Apply without :seed uses hash(parent seed,
/// argument ordinal); bindings are evaluated once with a seed derived from
/// their name.
Embedding evaluate(const TreeProgram& program, const OperatorRegistry& registry, const EvalOptions& options);

}  // namespace embops
