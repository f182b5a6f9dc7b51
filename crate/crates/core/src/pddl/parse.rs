use std::collections::{BTreeMap, BTreeSet};

use super::{
    ActionSchema, Atom, Domain, Literal, Location, PddlError, PredicateDecl, Problem, TypeDecl, TypedName, ROOT_TYPE,
};

#[derive(Debug, Clone)]
enum Sexp {
    Sym(String, Location),
    List(Vec<Sexp>, Location),
}

impl Sexp {
    fn at(&self) -> Location {
        match self {
            Sexp::Sym(_, l) | Sexp::List(_, l) => *l,
        }
    }

    fn sym(&self) -> Option<&str> {
        match self {
            Sexp::Sym(s, _) => Some(s),
            Sexp::List(..) => None,
        }
    }
}

fn syntax(message: impl Into<String>, at: Location) -> PddlError {
    PddlError::Syntax {
        message: message.into(),
        at,
    }
}

fn is_symbol_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '?' | ':' | '.' | '=')
}

enum Token {
    Open(Location),
    Close(Location),
    Sym(String, Location),
}

fn lex(text: &str) -> Result<Vec<Token>, PddlError> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut col) = (1, 1);
    while let Some(&c) = chars.peek() {
        let at = Location { line, col };
        match c {
            '\n' => {
                chars.next();
                line += 1;
                col = 1;
                continue;
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            ';' => {
                while chars.peek().is_some_and(|c| *c != '\n') {
                    chars.next();
                }
                continue;
            }
            '(' => {
                chars.next();
                out.push(Token::Open(at));
            }
            ')' => {
                chars.next();
                out.push(Token::Close(at));
            }
            c if is_symbol_char(c) => {
                let mut s = String::new();
                while let Some(&c) = chars.peek().filter(|c| is_symbol_char(**c)) {
                    s.push(c.to_ascii_lowercase());
                    chars.next();
                    col += 1;
                }
                out.push(Token::Sym(s, at));
                continue;
            }
            ch => return Err(PddlError::Lexical { ch, at }),
        }
        col += 1;
    }
    Ok(out)
}

fn read_sexp(text: &str) -> Result<Sexp, PddlError> {
    let tokens = lex(text)?;
    let mut stack: Vec<(Vec<Sexp>, Location)> = Vec::new();
    let mut root = None;
    for tok in tokens {
        if root.is_some() {
            let at = match tok {
                Token::Open(l) | Token::Close(l) | Token::Sym(_, l) => l,
            };
            return Err(syntax("trailing input after top-level form", at));
        }
        match tok {
            Token::Open(l) => stack.push((Vec::new(), l)),
            Token::Close(l) => {
                let (items, open) = stack.pop().ok_or_else(|| syntax("unbalanced `)`", l))?;
                let node = Sexp::List(items, open);
                match stack.last_mut() {
                    Some((parent, _)) => parent.push(node),
                    None => root = Some(node),
                }
            }
            Token::Sym(s, l) => match stack.last_mut() {
                Some((parent, _)) => parent.push(Sexp::Sym(s, l)),
                None => return Err(syntax("expected `(`", l)),
            },
        }
    }
    if let Some((_, open)) = stack.last() {
        return Err(syntax("unclosed `(`", *open));
    }
    root.ok_or_else(|| syntax("empty input", Location { line: 1, col: 1 }))
}

fn expect_list<'a>(s: &'a Sexp, what: &str) -> Result<(&'a [Sexp], Location), PddlError> {
    match s {
        Sexp::List(items, at) => Ok((items, *at)),
        Sexp::Sym(_, at) => Err(syntax(format!("expected {what}"), *at)),
    }
}

fn expect_sym<'a>(s: &'a Sexp, what: &str) -> Result<&'a str, PddlError> {
    s.sym().ok_or_else(|| syntax(format!("expected {what}"), s.at()))
}

/// `(define (<kind> name) sections...)`
fn header<'a>(root: &'a Sexp, kind: &str) -> Result<(String, &'a [Sexp]), PddlError> {
    let (items, at) = expect_list(root, "`(define ...)`")?;
    if items.first().and_then(Sexp::sym) != Some("define") {
        return Err(syntax("expected `define`", items.first().map_or(at, Sexp::at)));
    }
    let head = items.get(1).ok_or_else(|| syntax(format!("expected `({kind} name)`"), at))?;
    let (h, hat) = expect_list(head, &format!("`({kind} name)`"))?;
    match h {
        [Sexp::Sym(k, _), Sexp::Sym(name, _)] if k == kind => Ok((name.clone(), &items[2..])),
        _ => Err(syntax(format!("expected `({kind} name)`"), hat)),
    }
}

/// Typed list `a b - t c - u d` (trailing untyped names get the root type).
fn typed_list(items: &[Sexp]) -> Result<Vec<(TypedName, Location)>, PddlError> {
    let mut out = Vec::new();
    let mut pending: Vec<(String, Location)> = Vec::new();
    let mut i = 0;
    while i < items.len() {
        let s = expect_sym(&items[i], "a name")?;
        if s == "-" {
            let ty = items
                .get(i + 1)
                .ok_or_else(|| syntax("expected a type after `-`", items[i].at()))?;
            let ty = expect_sym(ty, "a type name")?;
            if pending.is_empty() {
                return Err(syntax("type annotation without names", items[i].at()));
            }
            for (n, at) in pending.drain(..) {
                out.push((TypedName { name: n, ty: ty.into() }, at));
            }
            i += 2;
        } else {
            pending.push((s.into(), items[i].at()));
            i += 1;
        }
    }
    for (n, at) in pending {
        out.push((
            TypedName {
                name: n,
                ty: ROOT_TYPE.into(),
            },
            at,
        ));
    }
    Ok(out)
}

fn raw_literal(s: &Sexp) -> Result<(Atom, bool, Location), PddlError> {
    let (items, at) = expect_list(s, "a literal")?;
    if items.first().and_then(Sexp::sym) == Some("not") {
        if items.len() != 2 {
            return Err(syntax("`not` takes exactly one atom", at));
        }
        let (a, pos, l) = raw_literal(&items[1])?;
        if !pos {
            return Err(syntax("nested negation", at));
        }
        return Ok((a, false, l));
    }
    let name = items.first().ok_or_else(|| syntax("empty atom", at))?;
    let pred = expect_sym(name, "a predicate name")?;
    let args = items[1..]
        .iter()
        .map(|a| expect_sym(a, "an argument").map(str::to_string))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((
        Atom {
            predicate: pred.into(),
            args,
        },
        true,
        name.at(),
    ))
}

fn conjunction(s: &Sexp) -> Result<Vec<(Atom, bool, Location)>, PddlError> {
    let (items, _) = expect_list(s, "a condition")?;
    match items.first().and_then(Sexp::sym) {
        None if items.is_empty() => Ok(vec![]),
        Some("and") => items[1..].iter().map(raw_literal).collect(),
        Some("or" | "imply" | "exists" | "forall" | "when") => Err(PddlError::UnknownKeyword {
            keyword: items[0].sym().unwrap_or_default().into(),
            at: items[0].at(),
        }),
        _ => Ok(vec![raw_literal(s)?]),
    }
}

struct Scope<'a> {
    domain: &'a Domain,
    /// name -> type for variables or objects visible here.
    names: BTreeMap<String, String>,
}

impl Scope<'_> {
    fn check_atom(&self, atom: &Atom, at: Location, variables: bool) -> Result<(), PddlError> {
        let decl = self
            .domain
            .predicate(&atom.predicate)
            .ok_or_else(|| PddlError::UndeclaredPredicate {
                name: atom.predicate.clone(),
                at,
            })?;
        if decl.params.len() != atom.args.len() {
            return Err(PddlError::ArityMismatch {
                name: atom.predicate.clone(),
                expected: decl.params.len(),
                got: atom.args.len(),
                at,
            });
        }
        for (arg, param) in atom.args.iter().zip(&decl.params) {
            let ty = match self.names.get(arg) {
                Some(t) => t,
                None if arg.starts_with('?') && variables => {
                    return Err(PddlError::UnboundVariable { name: arg.clone(), at });
                }
                None => return Err(PddlError::UndeclaredObject { name: arg.clone(), at }),
            };
            if !self.domain.is_subtype(ty, &param.ty) {
                return Err(PddlError::TypeMismatch {
                    object: arg.clone(),
                    expected: param.ty.clone(),
                    actual: ty.clone(),
                    at,
                });
            }
        }
        Ok(())
    }

    fn literals(&self, raw: Vec<(Atom, bool, Location)>, variables: bool) -> Result<Vec<Literal>, PddlError> {
        raw.into_iter()
            .map(|(atom, positive, at)| {
                self.check_atom(&atom, at, variables)?;
                Ok(Literal { atom, positive })
            })
            .collect()
    }
}

fn check_types(domain: &Domain, names: &[(TypedName, Location)]) -> Result<(), PddlError> {
    for (n, at) in names {
        if !domain.has_type(&n.ty) {
            return Err(PddlError::UndeclaredType {
                name: n.ty.clone(),
                at: *at,
            });
        }
    }
    Ok(())
}

fn no_duplicates(what: &'static str, names: &[(TypedName, Location)]) -> Result<(), PddlError> {
    let mut seen = BTreeSet::new();
    for (n, at) in names {
        if !seen.insert(n.name.as_str()) {
            return Err(PddlError::Duplicate {
                what,
                name: n.name.clone(),
                at: *at,
            });
        }
    }
    Ok(())
}

pub fn parse_domain(text: &str) -> Result<Domain, PddlError> {
    let root = read_sexp(text)?;
    let (name, sections) = header(&root, "domain")?;
    let mut dom = Domain {
        name,
        requirements: vec![],
        types: vec![],
        constants: vec![],
        predicates: vec![],
        actions: vec![],
    };
    let mut raw_actions = Vec::new();
    for sec in sections {
        let (items, at) = expect_list(sec, "a domain section")?;
        let key = items.first().ok_or_else(|| syntax("empty section", at))?;
        let kw = expect_sym(key, "a section keyword")?;
        let body = &items[1..];
        match kw {
            ":requirements" => {
                for r in body {
                    dom.requirements.push(expect_sym(r, "a requirement flag")?.into());
                }
            }
            ":types" => {
                for (t, _) in typed_list(body)? {
                    dom.types.push(TypeDecl {
                        name: t.name,
                        parent: t.ty,
                    });
                }
            }
            ":constants" => {
                let c = typed_list(body)?;
                dom.constants.extend(c.into_iter().map(|(t, _)| t));
            }
            ":predicates" => {
                for p in body {
                    let (pi, pat) = expect_list(p, "a predicate declaration")?;
                    let pname = expect_sym(pi.first().ok_or_else(|| syntax("empty predicate", pat))?, "a name")?;
                    let params = typed_list(&pi[1..])?;
                    if dom.predicate(pname).is_some() {
                        return Err(PddlError::Duplicate {
                            what: "predicate",
                            name: pname.into(),
                            at: pat,
                        });
                    }
                    dom.predicates.push(PredicateDecl {
                        name: pname.into(),
                        params: params.into_iter().map(|(t, _)| t).collect(),
                    });
                }
            }
            ":action" => raw_actions.push((body, at)),
            other => {
                return Err(PddlError::UnknownKeyword {
                    keyword: other.into(),
                    at: key.at(),
                })
            }
        }
    }
    for t in &dom.types {
        if !dom.has_type(&t.parent) {
            return Err(PddlError::UndeclaredType {
                name: t.parent.clone(),
                at: root.at(),
            });
        }
    }
    for c in &dom.constants {
        if !dom.has_type(&c.ty) {
            return Err(PddlError::UndeclaredType {
                name: c.ty.clone(),
                at: root.at(),
            });
        }
    }
    for p in &dom.predicates {
        if let Some(t) = p.params.iter().find(|t| !dom.has_type(&t.ty)) {
            return Err(PddlError::UndeclaredType {
                name: t.ty.clone(),
                at: root.at(),
            });
        }
    }
    for (body, at) in raw_actions {
        let action = parse_action(&dom, body, at)?;
        if dom.action(&action.name).is_some() {
            return Err(PddlError::Duplicate {
                what: "action",
                name: action.name,
                at,
            });
        }
        dom.actions.push(action);
    }
    Ok(dom)
}

fn parse_action(dom: &Domain, body: &[Sexp], at: Location) -> Result<ActionSchema, PddlError> {
    let name = expect_sym(body.first().ok_or_else(|| syntax("action needs a name", at))?, "an action name")?;
    let mut params = Vec::new();
    let mut pre = Vec::new();
    let mut eff = Vec::new();
    let mut i = 1;
    while i < body.len() {
        let kw = expect_sym(&body[i], "an action keyword")?;
        let val = body
            .get(i + 1)
            .ok_or_else(|| syntax(format!("`{kw}` needs a value"), body[i].at()))?;
        match kw {
            ":parameters" => {
                let (items, _) = expect_list(val, "a parameter list")?;
                params = typed_list(items)?;
                if let Some((p, pat)) = params.iter().find(|(p, _)| !p.name.starts_with('?')) {
                    return Err(syntax(format!("parameter `{}` must start with `?`", p.name), *pat));
                }
                check_types(dom, &params)?;
                no_duplicates("parameter", &params)?;
            }
            ":precondition" => pre = conjunction(val)?,
            ":effect" => eff = conjunction(val)?,
            other => {
                return Err(PddlError::UnknownKeyword {
                    keyword: other.into(),
                    at: body[i].at(),
                })
            }
        }
        i += 2;
    }
    let mut names: BTreeMap<String, String> = dom.constants.iter().map(|c| (c.name.clone(), c.ty.clone())).collect();
    names.extend(params.iter().map(|(p, _)| (p.name.clone(), p.ty.clone())));
    let scope = Scope { domain: dom, names };
    Ok(ActionSchema {
        name: name.into(),
        parameters: params.into_iter().map(|(p, _)| p).collect(),
        precondition: scope.literals(pre, true)?,
        effect: scope.literals(eff, true)?,
    })
}

pub fn parse_problem(text: &str, dom: &Domain) -> Result<Problem, PddlError> {
    let root = read_sexp(text)?;
    let (name, sections) = header(&root, "problem")?;
    let mut prob = Problem {
        name,
        domain: String::new(),
        objects: vec![],
        init: BTreeSet::new(),
        goal: vec![],
        feasible: vec![],
    };
    let mut raw_init = Vec::new();
    let mut raw_goal = Vec::new();
    for sec in sections {
        let (items, at) = expect_list(sec, "a problem section")?;
        let key = items.first().ok_or_else(|| syntax("empty section", at))?;
        let kw = expect_sym(key, "a section keyword")?;
        let body = &items[1..];
        match kw {
            ":domain" => {
                let d = expect_sym(body.first().ok_or_else(|| syntax("missing domain name", at))?, "a name")?;
                if d != dom.name {
                    return Err(syntax(format!("problem is for domain `{d}`, not `{}`", dom.name), at));
                }
                prob.domain = d.into();
            }
            ":objects" => {
                let objs = typed_list(body)?;
                check_types(dom, &objs)?;
                no_duplicates("object", &objs)?;
                if let Some((o, oat)) = objs.iter().find(|(o, _)| dom.constants.iter().any(|c| c.name == o.name)) {
                    return Err(PddlError::Duplicate {
                        what: "object",
                        name: o.name.clone(),
                        at: *oat,
                    });
                }
                prob.objects = objs.into_iter().map(|(o, _)| o).collect();
            }
            ":init" => {
                for a in body {
                    let (atom, pos, aat) = raw_literal(a)?;
                    if !pos {
                        return Err(syntax("negative literal in `:init`", aat));
                    }
                    raw_init.push((atom, aat));
                }
            }
            ":goal" => raw_goal = body.first().map(conjunction).transpose()?.unwrap_or_default(),
            ":feasible" => {
                for p in body {
                    let n = expect_sym(p, "a predicate name")?;
                    if dom.predicate(n).is_none() {
                        return Err(PddlError::UndeclaredPredicate { name: n.into(), at: p.at() });
                    }
                    prob.feasible.push(n.into());
                }
            }
            other => {
                return Err(PddlError::UnknownKeyword {
                    keyword: other.into(),
                    at: key.at(),
                })
            }
        }
    }
    if prob.domain.is_empty() {
        prob.domain = dom.name.clone();
    }
    let mut names: BTreeMap<String, String> = dom.constants.iter().map(|c| (c.name.clone(), c.ty.clone())).collect();
    names.extend(prob.objects.iter().map(|o| (o.name.clone(), o.ty.clone())));
    let scope = Scope { domain: dom, names };
    for (atom, at) in raw_init {
        scope.check_atom(&atom, at, false)?;
        prob.init.insert(atom);
    }
    prob.goal = scope.literals(raw_goal, false)?;
    Ok(prob)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_domain() {
        let d = parse_domain("(define (domain d))").unwrap();
        assert_eq!(d.name, "d");
        assert!(d.predicates.is_empty() && d.actions.is_empty());
    }

    #[test]
    fn undeclared_predicate_is_located() {
        let text = "(define (domain d)\n  (:predicates (p))\n  (:action a :parameters ()\n    :precondition (and (foo))\n    :effect (p)))";
        let err = parse_domain(text).unwrap_err();
        assert_eq!(
            err,
            PddlError::UndeclaredPredicate {
                name: "foo".into(),
                at: Location { line: 4, col: 25 }
            }
        );
        assert!(err.to_string().contains("foo") && err.to_string().starts_with("4:25"));
    }

    #[test]
    fn lexical_error_position() {
        let err = parse_domain("(define\n (domain d) #)").unwrap_err();
        assert_eq!(
            err,
            PddlError::Lexical {
                ch: '#',
                at: Location { line: 2, col: 13 }
            }
        );
    }

    #[test]
    fn unknown_section_keyword() {
        let err = parse_domain("(define (domain d) (:functions (f)))").unwrap_err();
        assert!(matches!(err, PddlError::UnknownKeyword { keyword, .. } if keyword == ":functions"));
    }

    #[test]
    fn arity_checked() {
        let err = parse_domain(
            "(define (domain d) (:predicates (p ?x)) (:action a :parameters (?x) :precondition (p ?x ?x) :effect (p ?x)))",
        )
        .unwrap_err();
        assert!(matches!(err, PddlError::ArityMismatch { expected: 1, got: 2, .. }));
    }

    #[test]
    fn unbound_variable() {
        let err = parse_domain(
            "(define (domain d) (:predicates (p ?x)) (:action a :parameters (?x) :precondition (p ?y) :effect (p ?x)))",
        )
        .unwrap_err();
        assert!(matches!(err, PddlError::UnboundVariable { .. }));
    }

    #[test]
    fn problem_object_of_undeclared_type() {
        let d = parse_domain("(define (domain d) (:types block))").unwrap();
        let err = parse_problem("(define (problem p) (:domain d) (:objects a - ball))", &d).unwrap_err();
        assert!(matches!(err, PddlError::UndeclaredType { name, .. } if name == "ball"));
    }

    #[test]
    fn problem_type_mismatch() {
        let d = parse_domain("(define (domain d) (:types block table) (:predicates (on ?b - block)))").unwrap();
        let err = parse_problem(
            "(define (problem p) (:domain d) (:objects t - table) (:init (on t)) (:goal (and)))",
            &d,
        )
        .unwrap_err();
        assert!(matches!(err, PddlError::TypeMismatch { .. }));
    }

    #[test]
    fn undeclared_object_in_init() {
        let d = parse_domain("(define (domain d) (:predicates (on ?b)))").unwrap();
        let err = parse_problem("(define (problem p) (:domain d) (:init (on zz)))", &d).unwrap_err();
        assert!(matches!(err, PddlError::UndeclaredObject { name, .. } if name == "zz"));
    }

    #[test]
    fn subtypes_are_compatible() {
        let d = parse_domain("(define (domain d) (:types part - object link - part) (:predicates (p ?x - part)))").unwrap();
        assert!(d.is_subtype("link", "part"));
        assert!(d.is_subtype("link", ROOT_TYPE));
        assert!(!d.is_subtype("part", "link"));
        parse_problem("(define (problem p) (:domain d) (:objects l - link) (:init (p l)))", &d).unwrap();
    }
}
