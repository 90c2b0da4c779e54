"""Static detection of undefined variables and the attributes used on them.

The analyzer parses a snippet, builds its scope tree, and reports every name
that is read without being defined in its own scope or an enclosing one,
plus every ``base.attr`` access whose base is one of those undefined names.

Scoping follows the language rules: function and comprehension scopes nest,
class bodies do not leak into nested functions, parameters / loop targets /
with-targets / exception aliases all bind. The analysis is flow-insensitive
except for evaluation order within a single scope: a read that happens before
every binding of the same name in the same scope counts as undefined (so
``x = x + 1`` at top level reports ``x``), while a binding anywhere earlier
on any path counts as defining. Star imports are treated as defining nothing,
which can produce false positives on snippets that rely on them.

Names are ordered by first use in evaluation order, which visits call
arguments before the callee: in ``f(a.b)`` the base ``a`` is seen first.
Member collection is one level deep; ``a.b.c`` on undefined ``a`` reports
``a.b`` only, and an attribute that was stored earlier (``a.x = 1`` before
``a.x`` is read) is not reported.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field
from importlib import resources


class AnalysisError(ValueError):
    """The snippet could not be parsed."""


def _load_builtin_names() -> frozenset[str]:
    text = resources.files("prefixer.data").joinpath("python_builtins.txt").read_text()
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


BUILTIN_NAMES = _load_builtin_names()


@dataclass(frozen=True)
class UndefinedRefs:
    """Undefined variables and the dotted members rooted at them.

    ``called`` records which of those names (or dotted paths) appear in call
    position; generators use it to pick callable stand-ins.
    """

    variables: tuple[str, ...]
    members: tuple[str, ...]
    called: frozenset[str] = frozenset()

    @property
    def is_empty(self) -> bool:
        return not self.variables and not self.members


_CLASS = "class"
_COMPREHENSION = "comprehension"
_FUNCTION = "function"
_MODULE = "module"


@dataclass
class _Scope:
    kind: str
    parent: "_Scope | None"
    # name -> earliest binding position (evaluation-order counter); -1 means
    # "defined everywhere" (used for global/nonlocal-declared assignments)
    bindings: dict[str, int] = field(default_factory=dict)
    globals: set[str] = field(default_factory=set)
    nonlocals: set[str] = field(default_factory=set)

    def bind(self, name: str, position: int) -> None:
        previous = self.bindings.get(name)
        if previous is None or position < previous:
            self.bindings[name] = position


@dataclass(frozen=True)
class _Use:
    name: str
    scope: _Scope
    position: int


@dataclass(frozen=True)
class _MemberAccess:
    base: str
    attr: str
    scope: _Scope
    position: int
    is_store: bool
    is_call: bool


class _ScopeWalker:
    """Single pass that records bindings, loads, and attribute accesses.

    Children are visited in evaluation order (assignment values before their
    targets, call arguments before the callee) so that the position counter
    reflects when a read would actually happen at run time.
    """

    def __init__(self) -> None:
        self.counter = 0
        self.uses: list[_Use] = []
        self.members: list[_MemberAccess] = []
        self.called_names: list[tuple[str, _Scope, int]] = []
        self.scopes: list[_Scope] = []

    def _tick(self) -> int:
        self.counter += 1
        return self.counter

    def _new_scope(self, kind: str, parent: _Scope | None) -> _Scope:
        scope = _Scope(kind, parent)
        self.scopes.append(scope)
        return scope

    # -- entry ----------------------------------------------------------

    def walk_module(self, tree: ast.Module) -> _Scope:
        module = self._new_scope(_MODULE, None)
        for stmt in tree.body:
            self._stmt(stmt, module)
        return module

    # -- statements ------------------------------------------------------

    def _stmt(self, node: ast.stmt, scope: _Scope) -> None:
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            self._function(node, scope)
        elif isinstance(node, ast.ClassDef):
            self._class(node, scope)
        elif isinstance(node, ast.Return):
            if node.value is not None:
                self._expr(node.value, scope)
        elif isinstance(node, ast.Delete):
            for target in node.targets:
                self._delete_target(target, scope)
        elif isinstance(node, ast.Assign):
            self._expr(node.value, scope)
            for target in node.targets:
                self._bind_target(target, scope)
        elif isinstance(node, ast.AugAssign):
            self._aug_target_load(node.target, scope)
            self._expr(node.value, scope)
            self._bind_target(node.target, scope)
        elif isinstance(node, ast.AnnAssign):
            if node.value is not None:
                self._expr(node.value, scope)
            if scope.kind in (_MODULE, _CLASS):
                self._expr(node.annotation, scope)
            if node.value is not None or node.simple == 0:
                self._bind_target(node.target, scope)
            elif isinstance(node.target, ast.Name):
                # bare annotation still declares the name local
                scope.bind(node.target.id, self._tick())
        elif isinstance(node, (ast.For, ast.AsyncFor)):
            self._expr(node.iter, scope)
            self._bind_target(node.target, scope)
            for stmt in node.body:
                self._stmt(stmt, scope)
            for stmt in node.orelse:
                self._stmt(stmt, scope)
        elif isinstance(node, ast.While):
            self._expr(node.test, scope)
            for stmt in node.body:
                self._stmt(stmt, scope)
            for stmt in node.orelse:
                self._stmt(stmt, scope)
        elif isinstance(node, ast.If):
            self._expr(node.test, scope)
            for stmt in node.body:
                self._stmt(stmt, scope)
            for stmt in node.orelse:
                self._stmt(stmt, scope)
        elif isinstance(node, (ast.With, ast.AsyncWith)):
            for item in node.items:
                self._expr(item.context_expr, scope)
                if item.optional_vars is not None:
                    self._bind_target(item.optional_vars, scope)
            for stmt in node.body:
                self._stmt(stmt, scope)
        elif isinstance(node, ast.Raise):
            if node.exc is not None:
                self._expr(node.exc, scope)
            if node.cause is not None:
                self._expr(node.cause, scope)
        elif isinstance(node, ast.Try) or (
            hasattr(ast, "TryStar") and isinstance(node, ast.TryStar)
        ):
            for stmt in node.body:
                self._stmt(stmt, scope)
            for handler in node.handlers:
                if handler.type is not None:
                    self._expr(handler.type, scope)
                if handler.name is not None:
                    scope.bind(handler.name, self._tick())
                for stmt in handler.body:
                    self._stmt(stmt, scope)
            for stmt in node.orelse:
                self._stmt(stmt, scope)
            for stmt in node.finalbody:
                self._stmt(stmt, scope)
        elif isinstance(node, ast.Assert):
            self._expr(node.test, scope)
            if node.msg is not None:
                self._expr(node.msg, scope)
        elif isinstance(node, ast.Import):
            for alias in node.names:
                bound = alias.asname or alias.name.split(".")[0]
                scope.bind(bound, self._tick())
        elif isinstance(node, ast.ImportFrom):
            for alias in node.names:
                if alias.name == "*":
                    continue  # star imports define nothing we can rely on
                scope.bind(alias.asname or alias.name, self._tick())
        elif isinstance(node, ast.Global):
            scope.globals.update(node.names)
        elif isinstance(node, ast.Nonlocal):
            scope.nonlocals.update(node.names)
        elif isinstance(node, ast.Expr):
            self._expr(node.value, scope)
        elif hasattr(ast, "Match") and isinstance(node, ast.Match):
            self._expr(node.subject, scope)
            for case in node.cases:
                self._match_pattern(case.pattern, scope)
                if case.guard is not None:
                    self._expr(case.guard, scope)
                for stmt in case.body:
                    self._stmt(stmt, scope)
        # Pass / Break / Continue: nothing to record

    def _match_pattern(self, pattern: ast.AST, scope: _Scope) -> None:
        if isinstance(pattern, ast.MatchValue):
            self._expr(pattern.value, scope)
        elif isinstance(pattern, ast.MatchAs):
            if pattern.pattern is not None:
                self._match_pattern(pattern.pattern, scope)
            if pattern.name is not None:
                scope.bind(pattern.name, self._tick())
        elif isinstance(pattern, ast.MatchStar):
            if pattern.name is not None:
                scope.bind(pattern.name, self._tick())
        elif isinstance(pattern, ast.MatchMapping):
            for key in pattern.keys:
                self._expr(key, scope)
            for sub in pattern.patterns:
                self._match_pattern(sub, scope)
            if pattern.rest is not None:
                scope.bind(pattern.rest, self._tick())
        elif isinstance(pattern, ast.MatchClass):
            self._expr(pattern.cls, scope)
            for sub in pattern.patterns:
                self._match_pattern(sub, scope)
            for sub in pattern.kwd_patterns:
                self._match_pattern(sub, scope)
        elif isinstance(pattern, (ast.MatchSequence, ast.MatchOr)):
            for sub in pattern.patterns:
                self._match_pattern(sub, scope)

    def _function(self, node: ast.FunctionDef | ast.AsyncFunctionDef, scope: _Scope) -> None:
        for decorator in node.decorator_list:
            self._expr(decorator, scope)
        args = node.args
        for default in args.defaults:
            self._expr(default, scope)
        for default in args.kw_defaults:
            if default is not None:
                self._expr(default, scope)
        for arg in self._all_args(args):
            if arg.annotation is not None:
                self._expr(arg.annotation, scope)
        if node.returns is not None:
            self._expr(node.returns, scope)
        scope.bind(node.name, self._tick())
        inner = self._new_scope(_FUNCTION, scope)
        for arg in self._all_args(args):
            inner.bind(arg.arg, 0)
        for stmt in node.body:
            self._stmt(stmt, inner)

    @staticmethod
    def _all_args(args: ast.arguments) -> list[ast.arg]:
        found = list(args.posonlyargs) + list(args.args) + list(args.kwonlyargs)
        if args.vararg is not None:
            found.append(args.vararg)
        if args.kwarg is not None:
            found.append(args.kwarg)
        return found

    def _class(self, node: ast.ClassDef, scope: _Scope) -> None:
        for decorator in node.decorator_list:
            self._expr(decorator, scope)
        for base in node.bases:
            self._expr(base, scope)
        for keyword in node.keywords:
            self._expr(keyword.value, scope)
        scope.bind(node.name, self._tick())
        inner = self._new_scope(_CLASS, scope)
        for stmt in node.body:
            self._stmt(stmt, inner)

    # -- binding targets ---------------------------------------------------

    def _bind_target(self, target: ast.AST, scope: _Scope) -> None:
        if isinstance(target, ast.Name):
            scope.bind(target.id, self._tick())
        elif isinstance(target, (ast.Tuple, ast.List)):
            for element in target.elts:
                self._bind_target(element, scope)
        elif isinstance(target, ast.Starred):
            self._bind_target(target.value, scope)
        elif isinstance(target, ast.Attribute):
            self._expr(target.value, scope)
            base = target.value
            if isinstance(base, ast.Name):
                self.members.append(
                    _MemberAccess(base.id, target.attr, scope, self._tick(), True, False)
                )
        elif isinstance(target, ast.Subscript):
            self._expr(target.value, scope)
            self._expr(target.slice, scope)

    def _aug_target_load(self, target: ast.AST, scope: _Scope) -> None:
        # augmented assignment reads its target before writing it
        if isinstance(target, ast.Name):
            self.uses.append(_Use(target.id, scope, self._tick()))
        else:
            self._expr(target, scope)

    def _delete_target(self, target: ast.AST, scope: _Scope) -> None:
        if isinstance(target, ast.Name):
            # `del x` makes x local to the scope; treat it as a binding
            scope.bind(target.id, self._tick())
        elif isinstance(target, ast.Attribute):
            self._expr(target.value, scope)
        elif isinstance(target, ast.Subscript):
            self._expr(target.value, scope)
            self._expr(target.slice, scope)
        elif isinstance(target, (ast.Tuple, ast.List)):
            for element in target.elts:
                self._delete_target(element, scope)

    # -- expressions -------------------------------------------------------

    def _expr(self, node: ast.AST, scope: _Scope, in_call_position: bool = False) -> None:
        if isinstance(node, ast.Name):
            position = self._tick()
            self.uses.append(_Use(node.id, scope, position))
            if in_call_position:
                self.called_names.append((node.id, scope, position))
        elif isinstance(node, ast.Attribute):
            self._expr(node.value, scope)
            base = node.value
            if isinstance(base, ast.Name):
                self.members.append(
                    _MemberAccess(
                        base.id, node.attr, scope, self._tick(), False, in_call_position
                    )
                )
        elif isinstance(node, ast.Call):
            # arguments are recorded before the callee: the first thing a
            # reader needs to supply for f(a.b) is the argument's base object
            for arg in node.args:
                self._expr(arg, scope)
            for keyword in node.keywords:
                self._expr(keyword.value, scope)
            self._expr(node.func, scope, in_call_position=True)
        elif isinstance(node, ast.Lambda):
            for default in node.args.defaults:
                self._expr(default, scope)
            for default in node.args.kw_defaults:
                if default is not None:
                    self._expr(default, scope)
            inner = self._new_scope(_FUNCTION, scope)
            for arg in self._all_args(node.args):
                inner.bind(arg.arg, 0)
            self._expr(node.body, inner)
        elif isinstance(node, (ast.ListComp, ast.SetComp, ast.GeneratorExp, ast.DictComp)):
            self._comprehension(node, scope)
        elif isinstance(node, ast.Dict):
            for key, value in zip(node.keys, node.values):
                if key is not None:
                    self._expr(key, scope)
                self._expr(value, scope)
        elif isinstance(node, ast.NamedExpr):
            self._expr(node.value, scope)
            # walrus binds in the nearest enclosing non-comprehension scope
            target_scope = scope
            while target_scope.kind == _COMPREHENSION and target_scope.parent is not None:
                target_scope = target_scope.parent
            self._bind_target(node.target, target_scope)
        elif isinstance(node, ast.IfExp):
            self._expr(node.test, scope)
            self._expr(node.body, scope)
            self._expr(node.orelse, scope)
        else:
            for child in ast.iter_child_nodes(node):
                if isinstance(child, (ast.expr, ast.keyword)):
                    value = child.value if isinstance(child, ast.keyword) else child
                    self._expr(value, scope)

    def _comprehension(self, node: ast.AST, scope: _Scope) -> None:
        inner = self._new_scope(_COMPREHENSION, scope)
        generators = node.generators
        # the first iterable is evaluated in the enclosing scope
        self._expr(generators[0].iter, scope)
        self._bind_target(generators[0].target, inner)
        for condition in generators[0].ifs:
            self._expr(condition, inner)
        for generator in generators[1:]:
            self._expr(generator.iter, inner)
            self._bind_target(generator.target, inner)
            for condition in generator.ifs:
                self._expr(condition, inner)
        if isinstance(node, ast.DictComp):
            self._expr(node.key, inner)
            self._expr(node.value, inner)
        else:
            self._expr(node.elt, inner)


def _resolves(use: _Use) -> bool:
    """True if the name is defined at its point of use."""
    scope = use.scope
    name = use.name
    if name in scope.globals:
        module = scope
        while module.parent is not None:
            module = module.parent
        return name in module.bindings or name in BUILTIN_NAMES
    if name in scope.nonlocals:
        outer = scope.parent
        while outer is not None:
            if outer.kind == _FUNCTION and name in outer.bindings:
                return True
            outer = outer.parent
        return False
    # same scope: the binding must not come strictly after the use
    if name in scope.bindings and scope.bindings[name] < use.position:
        return True
    # enclosing scopes: existence is enough (function bodies run later), but
    # class scopes are invisible to anything nested inside them
    outer = scope.parent
    while outer is not None:
        if outer.kind != _CLASS and name in outer.bindings:
            # a global declaration in some function makes the name a module
            # binding; plain module/function bindings resolve here
            return True
        outer = outer.parent
    if name in scope.bindings:
        # bound in this scope but only after the use: read-before-assignment
        return False
    return name in BUILTIN_NAMES


def _global_declared_bindings(scopes: list[_Scope]) -> None:
    """Register names declared ``global`` and assigned somewhere as module-level."""
    for scope in scopes:
        if not scope.globals:
            continue
        module = scope
        while module.parent is not None:
            module = module.parent
        for name in scope.globals:
            if name in scope.bindings:
                module.bind(name, -1)


def get_undefined_refs(source: str) -> UndefinedRefs:
    """Report the snippet's undefined variables and the members used on them."""
    try:
        tree = ast.parse(source)
    except SyntaxError as error:
        raise AnalysisError(f"snippet does not parse: {error}") from error

    walker = _ScopeWalker()
    module = walker.walk_module(tree)

    _global_declared_bindings(walker.scopes)

    undefined: list[str] = []
    undefined_at: dict[str, int] = {}
    for use in sorted(walker.uses, key=lambda u: u.position):
        if use.name in undefined_at:
            continue
        if not _resolves(use):
            undefined.append(use.name)
            undefined_at[use.name] = use.position

    undefined_set = set(undefined)
    stored_attrs: dict[tuple[str, str], int] = {}
    for access in walker.members:
        if access.is_store:
            key = (access.base, access.attr)
            if key not in stored_attrs or access.position < stored_attrs[key]:
                stored_attrs[key] = access.position

    members: list[str] = []
    member_seen: set[str] = set()
    called: set[str] = set()
    for access in sorted(walker.members, key=lambda m: m.position):
        if access.is_store or access.base not in undefined_set:
            continue
        key = (access.base, access.attr)
        if key in stored_attrs and stored_attrs[key] < access.position:
            continue
        dotted = f"{access.base}.{access.attr}"
        if access.is_call:
            called.add(dotted)
        if dotted not in member_seen:
            member_seen.add(dotted)
            members.append(dotted)

    for name, _scope, position in walker.called_names:
        if name in undefined_set:
            called.add(name)

    return UndefinedRefs(
        variables=tuple(undefined),
        members=tuple(members),
        called=frozenset(called),
    )
