// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#include "embops/tree.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <set>

#include <nlohmann/json.hpp>

#include "embops/bytes.hpp"
#include "embops/embedding.hpp"
#include "embops/image.hpp"

namespace embops {

ParseError::ParseError(SourcePos pos, const std::string& message)
    : Error(ErrorKind::format,
            "line " + std::to_string(pos.line) + ", column " + std::to_string(pos.column) + ": " + message),
      pos_(pos),
      message_(message) {}

std::string tree_operator_name(OperatorName op) {
    switch (op) {
        case OperatorName::texturing: return "texture";
        case OperatorName::scene: return "scene";
        case OperatorName::union_op: return "union";
        case OperatorName::instruct: return "instruct";
        case OperatorName::composition: return "compose";
        case OperatorName::identity: return "id";
    }
    return "unknown";
}

// --- equality -----------------------------------------------------------------

namespace {

bool same_leaf(const Leaf& a, const Leaf& b) {
    return a.kind == b.kind && a.value == b.value && a.seed == b.seed && a.scale == b.scale;
}

}  // namespace

bool structurally_equal(const TreeNode& a, const TreeNode& b) {
    if (a.body.index() != b.body.index()) return false;
    if (const auto* la = std::get_if<Leaf>(&a.body)) return same_leaf(*la, std::get<Leaf>(b.body));
    if (const auto* ra = std::get_if<BindingRef>(&a.body)) return ra->name == std::get<BindingRef>(b.body).name;
    const auto& x = std::get<Apply>(a.body);
    const auto& y = std::get<Apply>(b.body);
    if (x.op != y.op || x.seed != y.seed || x.scale != y.scale || x.args.size() != y.args.size()) return false;
    for (std::size_t i = 0; i < x.args.size(); ++i) {
        if (x.args[i].slot != y.args[i].slot || !structurally_equal(*x.args[i].node, *y.args[i].node)) return false;
    }
    return true;
}

bool structurally_equal(const TreeProgram& a, const TreeProgram& b) {
    if (a.bindings.size() != b.bindings.size()) return false;
    for (std::size_t i = 0; i < a.bindings.size(); ++i) {
        if (a.bindings[i].first != b.bindings[i].first ||
            !structurally_equal(*a.bindings[i].second, *b.bindings[i].second)) {
            return false;
        }
    }
    return structurally_equal(*a.root, *b.root);
}

// --- lexer --------------------------------------------------------------------

namespace {

struct Token {
    enum class Kind { lparen, rparen, atom, string, keyword, end };
    Kind kind = Kind::end;
    std::string text;
    SourcePos pos;
};

bool is_delim(char c) {
    return c == '(' || c == ')' || c == '"' || c == ';' || c == ' ' || c == '\t' || c == '\n' || c == '\r';
}

std::vector<Token> lex(const std::string& src) {
    std::vector<Token> out;
    SourcePos pos;
    std::size_t i = 0;
    const auto advance = [&] {
        if (src[i] == '\n') {
            ++pos.line;
            pos.column = 1;
        } else {
            ++pos.column;
        }
        ++i;
    };
    while (i < src.size()) {
        const char c = src[i];
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            advance();
        } else if (c == ';') {
            while (i < src.size() && src[i] != '\n') advance();
        } else if (c == '(' || c == ')') {
            out.push_back({c == '(' ? Token::Kind::lparen : Token::Kind::rparen, std::string(1, c), pos});
            advance();
        } else if (c == '"') {
            const SourcePos start = pos;
            advance();
            std::string text;
            bool closed = false;
            while (i < src.size()) {
                const char ch = src[i];
                if (ch == '"') {
                    advance();
                    closed = true;
                    break;
                }
                if (ch == '\\') {
                    advance();
                    if (i >= src.size()) break;
                    const char esc = src[i];
                    if (esc == 'n') text += '\n';
                    else if (esc == '"' || esc == '\\') text += esc;
                    else throw ParseError(pos, std::string("unknown escape '\\") + esc + "'");
                    advance();
                    continue;
                }
                text += ch;
                advance();
            }
            if (!closed) throw ParseError(start, "unterminated string");
            out.push_back({Token::Kind::string, std::move(text), start});
        } else {
            const SourcePos start = pos;
            std::string text;
            while (i < src.size() && !is_delim(src[i])) {
                text += src[i];
                advance();
            }
            out.push_back({text.front() == ':' ? Token::Kind::keyword : Token::Kind::atom, std::move(text), start});
        }
    }
    out.push_back({Token::Kind::end, "", pos});
    return out;
}

void check_balance(const std::vector<Token>& tokens) {
    std::vector<SourcePos> open;
    for (const auto& t : tokens) {
        if (t.kind == Token::Kind::lparen) open.push_back(t.pos);
        if (t.kind == Token::Kind::rparen) {
            if (open.empty()) throw ParseError(t.pos, "unbalanced parentheses: unexpected ')'");
            open.pop_back();
        }
    }
    if (!open.empty()) throw ParseError(open.back(), "unbalanced parentheses: '(' is never closed");
}

bool is_name(const std::string& s) {
    if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
    for (const char c : s) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
    }
    return true;
}

const std::set<std::string>& reserved_words() {
    static const std::set<std::string> words{"let", "image", "text", "emb", "sample"};
    return words;
}

std::optional<OperatorName> tree_operator(const std::string& name) {
    static const std::map<std::string, OperatorName> names{
        {"texture", OperatorName::texturing},   {"texturing", OperatorName::texturing},
        {"scene", OperatorName::scene},         {"union", OperatorName::union_op},
        {"instruct", OperatorName::instruct},   {"compose", OperatorName::composition},
        {"composition", OperatorName::composition}, {"id", OperatorName::identity},
        {"identity", OperatorName::identity}};
    const auto it = names.find(name);
    if (it == names.end()) return std::nullopt;
    return it->second;
}

// --- parser -------------------------------------------------------------------

class Parser {
public:
    explicit Parser(std::vector<Token> tokens) : toks_(std::move(tokens)) {}

    TreeProgram program() {
        TreeProgram p;
        while (peek().kind == Token::Kind::lparen && peek(1).kind == Token::Kind::atom && peek(1).text == "let") {
            const SourcePos at = next().pos;
            next();
            const Token name = next();
            if (name.kind != Token::Kind::atom || !is_name(name.text) || reserved_words().count(name.text) ||
                tree_operator(name.text)) {
                throw ParseError(name.pos, "expected a binding name after 'let'");
            }
            if (bindings_.count(name.text)) throw ParseError(name.pos, "duplicate binding '" + name.text + "'");
            NodePtr value = expr();
            expect_close(at, "let");
            bindings_.insert(name.text);
            p.bindings.emplace_back(name.text, std::move(value));
        }
        if (peek().kind == Token::Kind::end) throw ParseError(peek().pos, "expected an expression");
        p.root = expr();
        if (peek().kind != Token::Kind::end) {
            throw ParseError(peek().pos, "unexpected '" + peek().text + "' after the root expression");
        }
        return p;
    }

private:
    const Token& peek(std::size_t ahead = 0) const { return toks_[std::min(pos_ + ahead, toks_.size() - 1)]; }
    const Token& next() {
        const Token& t = toks_[pos_];
        if (pos_ + 1 < toks_.size()) ++pos_;
        return t;
    }

    void expect_close(SourcePos open, const std::string& what) {
        const Token& t = peek();
        if (t.kind != Token::Kind::rparen) {
            throw ParseError(t.pos, "expected ')' to close '" + what + "' opened at line " +
                                        std::to_string(open.line) + ", column " + std::to_string(open.column));
        }
        next();
    }

    std::uint64_t integer(const Token& t, const std::string& key) {
        std::uint64_t v = 0;
        const auto* end = t.text.data() + t.text.size();
        const auto res = std::from_chars(t.text.data(), end, v);
        if (t.kind != Token::Kind::atom || res.ec != std::errc() || res.ptr != end) {
            throw ParseError(t.pos, key + " expects a non-negative integer");
        }
        return v;
    }

    double real(const Token& t, const std::string& key) {
        double v = 0.0;
        const auto* end = t.text.data() + t.text.size();
        const auto res = std::from_chars(t.text.data(), end, v);
        if (t.kind != Token::Kind::atom || res.ec != std::errc() || res.ptr != end || !std::isfinite(v) || v < 0.0) {
            throw ParseError(t.pos, key + " expects a non-negative real");
        }
        return v;
    }

    // :seed / :scale; returns false when the keyword is not one of them.
    bool option(const Token& key, std::optional<std::uint64_t>& seed, std::optional<double>& scale) {
        if (key.text == ":seed") {
            if (seed) throw ParseError(key.pos, "duplicate :seed");
            seed = integer(next(), ":seed");
            return true;
        }
        if (key.text == ":scale") {
            if (scale) throw ParseError(key.pos, "duplicate :scale");
            scale = real(next(), ":scale");
            return true;
        }
        return false;
    }

    NodePtr expr() {
        const Token& t = next();
        switch (t.kind) {
            case Token::Kind::atom:
                if (!is_name(t.text)) throw ParseError(t.pos, "unexpected '" + t.text + "'");
                if (!bindings_.count(t.text)) throw ParseError(t.pos, "undefined binding '" + t.text + "'");
                return std::make_shared<TreeNode>(TreeNode{BindingRef{t.text}, t.pos});
            case Token::Kind::lparen: return form(t.pos);
            case Token::Kind::end: throw ParseError(t.pos, "unexpected end of input");
            case Token::Kind::rparen: throw ParseError(t.pos, "expected an expression before ')'");
            case Token::Kind::string: throw ParseError(t.pos, "unexpected string; wrap text in (text \"...\")");
            case Token::Kind::keyword: throw ParseError(t.pos, "unexpected keyword '" + t.text + "'");
        }
        throw ParseError(t.pos, "unexpected token");
    }

    NodePtr form(SourcePos open) {
        const Token head = next();
        if (head.kind != Token::Kind::atom) throw ParseError(head.pos, "expected an operator or leaf name");
        if (head.text == "image" || head.text == "emb" || head.text == "text") {
            const Token arg = next();
            const bool text = head.text == "text";
            if (text ? arg.kind != Token::Kind::string
                     : (arg.kind != Token::Kind::atom && arg.kind != Token::Kind::string)) {
                throw ParseError(arg.pos, text ? "(text ...) expects a quoted string"
                                               : "(" + head.text + " ...) expects a path");
            }
            expect_close(open, head.text);
            Leaf leaf;
            leaf.kind = text ? Leaf::Kind::text : head.text == "image" ? Leaf::Kind::image : Leaf::Kind::embedding;
            leaf.value = arg.text;
            return std::make_shared<TreeNode>(TreeNode{std::move(leaf), open});
        }
        if (head.text == "sample") {
            const Token op = next();
            const auto name = op.kind == Token::Kind::atom ? tree_operator(op.text) : std::nullopt;
            if (!name) throw ParseError(op.pos, "unknown operator '" + op.text + "'");
            Leaf leaf;
            leaf.kind = Leaf::Kind::sample;
            leaf.value = tree_operator_name(*name);
            while (peek().kind == Token::Kind::keyword) {
                const Token key = next();
                if (!option(key, leaf.seed, leaf.scale)) throw ParseError(key.pos, "unknown option '" + key.text + "'");
            }
            expect_close(open, "sample");
            return std::make_shared<TreeNode>(TreeNode{std::move(leaf), open});
        }
        if (head.text == "let") throw ParseError(head.pos, "'let' is only allowed at the top level");
        const auto op = tree_operator(head.text);
        if (!op) throw ParseError(head.pos, "unknown operator '" + head.text + "'");
        Apply apply;
        apply.op = *op;
        const auto spec = builtin_spec(*op);
        std::optional<std::size_t> pending_slot;
        SourcePos pending_pos;
        std::set<std::size_t> used;
        while (peek().kind != Token::Kind::rparen && peek().kind != Token::Kind::end) {
            if (peek().kind == Token::Kind::keyword) {
                const Token key = next();
                if (key.text == ":slot") {
                    if (pending_slot) throw ParseError(key.pos, ":slot must be followed by an argument");
                    const auto slot = integer(next(), ":slot");
                    if (!spec.slot_map.contains_slot(slot)) {
                        throw ParseError(key.pos, "slot " + std::to_string(slot) + " is not an input of '" +
                                                      head.text + "'");
                    }
                    if (!used.insert(slot).second) throw ParseError(key.pos, "duplicate :slot " + std::to_string(slot));
                    pending_slot = slot;
                    pending_pos = key.pos;
                    continue;
                }
                if (!option(key, apply.seed, apply.scale)) {
                    throw ParseError(key.pos, "unknown option '" + key.text + "'");
                }
                continue;
            }
            apply.args.push_back(Arg{pending_slot, expr()});
            pending_slot.reset();
        }
        if (pending_slot) throw ParseError(pending_pos, ":slot must be followed by an argument");
        const std::size_t arity = spec.slot_map.arity();
        const bool variadic = *op == OperatorName::composition;
        if (variadic ? apply.args.size() > arity : apply.args.size() != arity) {
            throw ParseError(open, "arity mismatch: '" + head.text + "' takes " + (variadic ? "at most " : "") +
                                       std::to_string(arity) + " argument" + (arity == 1 ? "" : "s") + ", got " +
                                       std::to_string(apply.args.size()));
        }
        // Positional arguments take the slot of their ordinal; collisions with
        // explicit slots are errors.
        for (std::size_t i = 0; i < apply.args.size(); ++i) {
            if (apply.args[i].slot) continue;
            const auto slot = spec.slot_map.entries()[i].slot;
            if (!used.insert(slot).second) {
                throw ParseError(apply.args[i].node->pos, "duplicate :slot " + std::to_string(slot) +
                                                              " (positional argument " + std::to_string(i) + ")");
            }
        }
        expect_close(open, head.text);
        return std::make_shared<TreeNode>(TreeNode{std::move(apply), open});
    }

    std::vector<Token> toks_;
    std::size_t pos_ = 0;
    std::set<std::string> bindings_;
};

}  // namespace

TreeProgram parse_tree(const std::string& text) {
    auto tokens = lex(text);
    check_balance(tokens);
    return Parser(std::move(tokens)).program();
}

std::vector<std::size_t> resolve_slots(const Apply& apply) {
    const auto spec = builtin_spec(apply.op);
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < apply.args.size(); ++i) {
        out.push_back(apply.args[i].slot.value_or(spec.slot_map.entries()[i].slot));
    }
    return out;
}

// --- serializer -----------------------------------------------------------------

namespace {

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (const char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        if (c == '\n') {
            out += "\\n";
            continue;
        }
        out += c;
    }
    return out + "\"";
}

std::string atom_or_quote(const std::string& s) {
    bool safe = !s.empty() && s.front() != ':';
    for (const char c : s) safe = safe && !is_delim(c) && c != '\\';
    // A bare name would read back as a binding reference in expression position,
    // but leaf arguments are never expressions, so bare is unambiguous here.
    return safe ? s : quote(s);
}

std::string real_text(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

void options_text(std::string& out, const std::optional<std::uint64_t>& seed, const std::optional<double>& scale) {
    if (seed) out += " :seed " + std::to_string(*seed);
    if (scale) out += " :scale " + real_text(*scale);
}

}  // namespace

std::string serialize(const TreeNode& node) {
    if (const auto* ref = std::get_if<BindingRef>(&node.body)) return ref->name;
    if (const auto* leaf = std::get_if<Leaf>(&node.body)) {
        switch (leaf->kind) {
            case Leaf::Kind::image: return "(image " + atom_or_quote(leaf->value) + ")";
            case Leaf::Kind::text: return "(text " + quote(leaf->value) + ")";
            case Leaf::Kind::embedding: return "(emb " + atom_or_quote(leaf->value) + ")";
            case Leaf::Kind::sample: {
                std::string out = "(sample " + leaf->value;
                options_text(out, leaf->seed, leaf->scale);
                return out + ")";
            }
        }
    }
    const auto& apply = std::get<Apply>(node.body);
    std::string out = "(" + tree_operator_name(apply.op);
    for (const auto& arg : apply.args) {
        if (arg.slot) out += " :slot " + std::to_string(*arg.slot);
        out += " " + serialize(*arg.node);
    }
    options_text(out, apply.seed, apply.scale);
    return out + ")";
}

std::string serialize(const TreeProgram& program) {
    std::string out;
    for (const auto& [name, node] : program.bindings) out += "(let " + name + " " + serialize(*node) + ")\n";
    return out + serialize(*program.root) + "\n";
}

// --- registry -------------------------------------------------------------------

void OperatorRegistry::add(OperatorName op, std::shared_ptr<const OperatorModel> model) {
    require(model != nullptr, ErrorKind::invalid_argument, "null operator model");
    if (model->spec().name != op) {
        fail(ErrorKind::config, "checkpoint for '" + to_string(model->spec().name) + "' registered as '" +
                                    to_string(op) + "'");
    }
    models_[op] = std::move(model);
}

OperatorRegistry OperatorRegistry::from_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) fail(ErrorKind::io, "registry not found: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::format, "registry " + path.string() + " is not JSON: " + e.what());
    }
    require(j.is_object(), ErrorKind::format, "registry must map operator names to checkpoint paths");
    OperatorRegistry reg;
    for (const auto& [name, value] : j.items()) {
        const auto op = operator_from_string(name);
        std::filesystem::path ckpt = value.get<std::string>();
        if (ckpt.is_relative()) ckpt = path.parent_path() / ckpt;
        reg.add(op, std::make_shared<OperatorModel>(load_checkpoint(ckpt)));
    }
    return reg;
}

std::optional<std::size_t> OperatorRegistry::dim() const {
    if (models_.empty()) return std::nullopt;
    return models_.begin()->second->dim();
}

const OperatorModel& OperatorRegistry::get(OperatorName op) const {
    const auto it = models_.find(op);
    if (it == models_.end()) fail(ErrorKind::config, "no checkpoint registered for operator '" + to_string(op) + "'");
    return *it->second;
}

// --- evaluation -----------------------------------------------------------------

namespace {

class Evaluator {
public:
    Evaluator(const TreeProgram& program, const OperatorRegistry& registry, const EvalOptions& options)
        : registry_(registry), options_(options) {
        for (const auto& [name, node] : program.bindings) bindings_.emplace(name, node.get());
    }

    Embedding eval(const TreeNode& node, std::uint64_t seed) {
        if (const auto* ref = std::get_if<BindingRef>(&node.body)) return binding(ref->name);
        if (const auto* leaf = std::get_if<Leaf>(&node.body)) return eval_leaf(*leaf, seed);
        const auto& apply = std::get<Apply>(node.body);
        const std::uint64_t own = apply.seed.value_or(seed);
        const auto slots = resolve_slots(apply);
        std::vector<SlotCondition> conditions;
        for (std::size_t i = 0; i < apply.args.size(); ++i) {
            conditions.push_back({slots[i], eval(*apply.args[i].node, mix_seed(own, i))});
        }
        const auto& model = registry_.get(apply.op);
        for (const auto& c : conditions) {
            if (c.value.dim() != model.dim()) {
                fail(ErrorKind::config, "dimension mismatch: input of '" + tree_operator_name(apply.op) + "' has d=" +
                                            std::to_string(c.value.dim()) + ", checkpoint expects " +
                                            std::to_string(model.dim()));
            }
        }
        const auto out = model.sample(conditions, sampler(own, apply.scale.value_or(model.guidance_scale())));
        trace("apply " + tree_operator_name(apply.op));
        return out;
    }

private:
    SamplerOptions sampler(std::uint64_t seed, double scale) const {
        SamplerOptions o;
        o.steps = options_.steps;
        o.seed = seed;
        o.guidance.scale = scale;
        o.renormalize_to = options_.renormalize_to;
        return o;
    }

    void trace(const std::string& line) const {
        if (options_.trace) options_.trace(line);
    }

    std::filesystem::path resolve(const std::string& p) const {
        const std::filesystem::path path(p);
        return path.is_absolute() ? path : options_.base_dir / path;
    }

    const EncoderClient& encoder(const char* what) const {
        if (options_.encoder == nullptr) {
            fail(ErrorKind::config, std::string("tree uses (") + what + " ...) but no encoder is configured");
        }
        return *options_.encoder;
    }

    Embedding eval_leaf(const Leaf& leaf, std::uint64_t seed) {
        Embedding out;
        switch (leaf.kind) {
            case Leaf::Kind::image: out = encoder("image").encode_image(read_image(resolve(leaf.value))); break;
            case Leaf::Kind::text: out = encoder("text").encode_text(leaf.value); break;
            case Leaf::Kind::embedding: {
                const auto [file, index] = parse_embedding_ref(leaf.value);
                const auto batch = read_embeddings(resolve(file));
                if (index >= batch.size()) fail(ErrorKind::format, "reference '" + leaf.value + "' past end of file");
                out = batch[index];
                break;
            }
            case Leaf::Kind::sample: {
                const auto& model = registry_.get(operator_from_string(leaf.value));
                const std::uint64_t own = leaf.seed.value_or(seed);
                out = model.sample({}, sampler(own, leaf.scale.value_or(model.guidance_scale())));
                break;
            }
        }
        static const char* kinds[] = {"image", "text", "emb", "sample"};
        trace(std::string("leaf ") + kinds[static_cast<int>(leaf.kind)] + " " + leaf.value);
        return out;
    }

    Embedding binding(const std::string& name) {
        if (const auto it = memo_.find(name); it != memo_.end()) return it->second;
        const auto it = bindings_.find(name);
        if (it == bindings_.end()) fail(ErrorKind::config, "undefined binding '" + name + "'");
        auto value = eval(*it->second, mix_seed(options_.seed, fnv1a64(name)));
        trace("bind " + name);
        memo_.emplace(name, value);
        return value;
    }

    const OperatorRegistry& registry_;
    const EvalOptions& options_;
    std::map<std::string, const TreeNode*> bindings_;
    std::map<std::string, Embedding> memo_;
};

}  // namespace

Embedding evaluate(const TreeProgram& program, const OperatorRegistry& registry, const EvalOptions& options) {
    require(program.root != nullptr, ErrorKind::invalid_argument, "empty tree program");
    Evaluator ev(program, registry, options);
    return ev.eval(*program.root, options.seed);
}

}  // namespace embops
