//! Recursive-descent parser.
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := '-'? atom ('^' atom)?
//! atom   := number | 'pi' | var | 'u' | fn '(' expr ')'
//!         | 'D' '(' expr ',' var ')' | '(' expr ')'
//! ```

use super::{BinaryOp, Expr, ExprError, MultiIndex, UnaryOp, VarList, MAX_POW};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokenize(src: &'a str) -> Result<Vec<(Tok, usize)>, ExprError> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        loop {
            let (tok, at) = lx.next()?;
            let end = tok == Tok::End;
            out.push((tok, at));
            if end {
                return Ok(out);
            }
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn next(&mut self) -> Result<(Tok, usize), ExprError> {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(c) = self.peek() else {
            return Ok((Tok::End, start));
        };
        if c.is_ascii_digit() || c == '.' {
            return self.number(start);
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == '_') {
                self.pos += 1;
            }
            return Ok((Tok::Ident(self.src[start..self.pos].to_string()), start));
        }
        if "+-*/^(),".contains(c) {
            self.pos += 1;
            return Ok((Tok::Sym(c), start));
        }
        Err(ExprError::Syntax {
            pos: start,
            msg: format!("unexpected character `{c}`"),
        })
    }

    fn number(&mut self, start: usize) -> Result<(Tok, usize), ExprError> {
        let digits = |lx: &mut Self| {
            while lx.peek().is_some_and(|c| c.is_ascii_digit()) {
                lx.pos += 1;
            }
        };
        digits(self);
        if self.peek() == Some('.') {
            self.pos += 1;
            digits(self);
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some('+' | '-')) {
                self.pos += 1;
            }
            if self.peek().is_some_and(|c| c.is_ascii_digit()) {
                digits(self);
            } else {
                self.pos = save;
            }
        }
        let text = &self.src[start..self.pos];
        text.parse::<f64>()
            .map(|v| (Tok::Num(v), start))
            .map_err(|_| ExprError::Syntax {
                pos: start,
                msg: format!("malformed number `{text}`"),
            })
    }
}

struct Parser<'v> {
    toks: Vec<(Tok, usize)>,
    at: usize,
    vars: &'v VarList,
}

/// Parses `source` against the variable list. Derivative tokens are
/// differentiated symbolically as they are reduced.
pub fn parse(source: &str, vars: &VarList) -> Result<Expr, ExprError> {
    let toks = Lexer::tokenize(source)?;
    let mut p = Parser { toks, at: 0, vars };
    let e = p.expr()?;
    match p.peek() {
        Tok::End => Ok(e),
        t => Err(p.error(format!("unexpected {}", describe(t)))),
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("number {v}"),
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Sym(c) => format!("`{c}`"),
        Tok::End => "end of input".into(),
    }
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if t != Tok::End {
            self.at += 1;
        }
        t
    }

    fn error(&self, msg: String) -> ExprError {
        ExprError::Syntax {
            pos: self.pos(),
            msg,
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if *self.peek() == Tok::Sym(c) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ExprError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{c}`, found {}", describe(self.peek()))))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Sym('+') => BinaryOp::Add,
                Tok::Sym('-') => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Expr::binary(op, lhs, self.term()?);
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Tok::Sym('*') => BinaryOp::Mul,
                Tok::Sym('/') => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Expr::binary(op, lhs, self.factor()?);
        }
    }

    fn factor(&mut self) -> Result<Expr, ExprError> {
        let negate = self.eat('-');
        let mut base = self.atom()?;
        if *self.peek() == Tok::Sym('^') {
            self.bump();
            let at = self.pos();
            let exp = self.atom()?;
            let k = exp
                .as_const()
                .filter(|k| k.fract() == 0.0 && (0.0..=MAX_POW as f64).contains(k))
                .ok_or(ExprError::Syntax {
                    pos: at,
                    msg: format!("exponent must be an integer constant in 0..={MAX_POW}"),
                })?;
            base = Expr::powi(base, k as u32);
        }
        Ok(if negate { -base } else { base })
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let at = self.pos();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::Sym('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => self.ident(name, at),
            t => Err(ExprError::Syntax {
                pos: at,
                msg: format!("expected an operand, found {}", describe(&t)),
            }),
        }
    }

    fn ident(&mut self, name: String, at: usize) -> Result<Expr, ExprError> {
        match name.as_str() {
            "pi" => Ok(Expr::Const(std::f64::consts::PI)),
            "u" => Ok(Expr::Trial(MultiIndex::zero(self.vars.len()))),
            "D" => {
                self.expect('(')?;
                let inner = self.expr()?;
                self.expect(',')?;
                let target_at = self.pos();
                let var = match self.bump() {
                    Tok::Ident(v) => self.vars.index_of(&v),
                    _ => None,
                }
                .ok_or(ExprError::DerivativeTarget { pos: target_at })?;
                self.expect(')')?;
                inner.differentiate(var, self.vars.time_index())
            }
            _ => {
                if let Some(op) = UnaryOp::from_name(&name) {
                    self.expect('(')?;
                    let arg = self.expr()?;
                    self.expect(')')?;
                    return Ok(Expr::unary(op, arg));
                }
                self.vars
                    .index_of(&name)
                    .map(Expr::Var)
                    .ok_or(ExprError::UnknownIdent { name, pos: at })
            }
        }
    }
}
